use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distfit::{gpd_ln_pdf, gpd_mle, GaussianParams, GpdParams, MIN_EXCEEDANCES};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    Body,
    Tail,
}

impl Membership {
    pub fn is_tail(self) -> bool {
        self == Membership::Tail
    }

    /// CSV code: `B` or `T`.
    pub fn code(self) -> &'static str {
        match self {
            Membership::Body => "B",
            Membership::Tail => "T",
        }
    }

    pub fn from_code(s: &str) -> Result<Self> {
        match s.trim() {
            "B" | "b" | "0" => Ok(Membership::Body),
            "T" | "t" | "1" => Ok(Membership::Tail),
            other => Err(Error::Input(format!("membership code must be B or T, got {other:?}"))),
        }
    }
}

/// Body/tail labels for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipLabels {
    pub labels: Vec<Membership>,
    /// Fraction of the votes that went to the tail.
    pub tail_votes: Vec<f64>,
    /// Mixture proportion (body probability) the labels were produced with.
    pub p: f64,
    pub threshold: f64,
}

impl MembershipLabels {
    /// Labels known a priori (e.g. from a simulation); votes are 0 or 1.
    pub fn from_labels(labels: Vec<Membership>, p: f64, threshold: f64) -> Self {
        let tail_votes = labels.iter().map(|m| if m.is_tail() { 1.0 } else { 0.0 }).collect();
        Self {
            labels,
            tail_votes,
            p,
            threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tail_count(&self) -> usize {
        self.labels.iter().filter(|m| m.is_tail()).count()
    }

    pub fn tail_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i].is_tail()).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            tail_votes: idx.iter().map(|&i| self.tail_votes[i]).collect(),
            p: self.p,
            threshold: self.threshold,
        }
    }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::insufficient("quantile", 1, 0));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Body and tail densities fitted for the classification sampler.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComponentFits {
    pub body: GaussianParams,
    pub tail: GpdParams,
}

impl ComponentFits {
    /// Normal fitted to every value; GPD fitted to the exceedances of the
    /// empirical `p`-quantile.
    pub fn estimate(values: &[f64], p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("mixture proportion must lie in (0, 1), got {p}")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value {v}")));
        }
        let u = empirical_quantile(values, p)?;
        let exceedances: Vec<f64> = values.iter().filter(|&&v| v > u).map(|v| v - u).collect();
        if exceedances.len() < MIN_EXCEEDANCES {
            return Err(Error::insufficient(
                "tail classification (exceedances)",
                MIN_EXCEEDANCES,
                exceedances.len(),
            ));
        }
        let body = GaussianParams::mle(values)?;
        let tail = gpd_mle(&exceedances)?.params.with_threshold(u);
        Ok(Self { body, tail })
    }

    /// Acceptance ratio `min(1, p_T / p_B)`; zero at or below the threshold.
    pub fn tail_ratio(&self, y: f64) -> f64 {
        if !(y > self.tail.threshold) {
            return 0.0;
        }
        match gpd_ln_pdf(&self.tail, y) {
            Ok(lt) => (lt - self.body.ln_pdf(y)).min(0.0).exp(),
            Err(_) => 0.0,
        }
    }
}

/// Metropolis–Hastings-ratio labelling of `values` into body and tail.
///
/// Each observation gets `n_c` independent accept/reject votes with
/// acceptance probability [`ComponentFits::tail_ratio`]; the majority wins
/// and an exact tie goes to the body.
pub fn classify_mh(values: &[f64], p: f64, n_c: usize, seed: u64) -> Result<MembershipLabels> {
    let fits = ComponentFits::estimate(values, p)?;
    classify_with_fits(values, &fits, p, n_c, seed)
}

pub fn classify_with_fits(
    values: &[f64],
    fits: &ComponentFits,
    p: f64,
    n_c: usize,
    seed: u64,
) -> Result<MembershipLabels> {
    if n_c == 0 {
        return Err(Error::Input("number of votes must be positive".into()));
    }
    let mut labels = Vec::with_capacity(values.len());
    let mut tail_votes = Vec::with_capacity(values.len());
    for (i, &y) in values.iter().enumerate() {
        let ratio = fits.tail_ratio(y);
        let votes = if ratio == 0.0 {
            0
        } else {
            let mut rng = seeds::rng(seed, &[seeds::stream::CLASSIFY, i as u64]);
            (0..n_c).filter(|_| ratio >= rng.random::<f64>()).count()
        };
        labels.push(if 2 * votes > n_c {
            Membership::Tail
        } else {
            Membership::Body
        });
        tail_votes.push(votes as f64 / n_c as f64);
    }
    Ok(MembershipLabels {
        labels,
        tail_votes,
        p,
        threshold: fits.tail.threshold,
    })
}
