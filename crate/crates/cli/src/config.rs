//! Run settings: a flat TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

macro_rules! settings {
    ($($field:ident: $ty:ty),* $(,)?) => {
        /// Every key a config file may set. Unset keys fall back to the
        /// subcommand's defaults.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Settings {
            $(
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl Settings {
            /// `other`'s values win wherever they are set.
            pub fn overlay(mut self, other: Settings) -> Settings {
                $(
                    if other.$field.is_some() {
                        self.$field = other.$field;
                    }
                )*
                self
            }
        }
    };
}

settings! {
    input: PathBuf,
    labels: PathBuf,
    model: PathBuf,
    grid: PathBuf,
    out: PathBuf,
    seed: u64,
    threads: usize,
    scenario: String,
    n: usize,
    replicates: usize,
    full_scale: bool,
    clustered_range: f64,
    with_membership: bool,
    p1: f64,
    p2: f64,
    votes: usize,
    baseline: bool,
    smoothness: f64,
    fixed_lambda: f64,
    dic_samples: usize,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    nx: usize,
    ny: usize,
    samples: usize,
    t1: f64,
    t2: f64,
    mode: String,
    repetitions: usize,
    k: usize,
    point: String,
    given_labels: bool,
    p_min: f64,
    p_max: f64,
    p_step: f64,
    folds: usize,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Probabilities must lie strictly inside (0, 1).
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("p1", self.p1), ("p2", self.p2), ("p_min", self.p_min), ("p_max", self.p_max)] {
            if let Some(p) = v {
                if !(p > 0.0 && p < 1.0) {
                    return Err(format!("{name} must lie in (0, 1), got {p}"));
                }
            }
        }
        if let Some(s) = self.p_step {
            if !(s > 0.0) {
                return Err(format!("p_step must be positive, got {s}"));
            }
        }
        for (name, v) in [("nx", self.nx), ("ny", self.ny), ("threads", self.threads)] {
            if v == Some(0) {
                return Err(format!("{name} must be positive"));
            }
        }
        for (name, p) in [("input", &self.input), ("labels", &self.labels), ("model", &self.model), ("grid", &self.grid)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(format!("{name} file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}
