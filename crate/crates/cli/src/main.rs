//! Command-line front end for extremix.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Settings;

#[derive(Parser)]
#[command(name = "extremix", version, about = "Bivariate spatial extreme mixture models")]
struct Cli {
    /// Flat TOML file of settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario dataset.
    Simulate(SimulateArgs),
    /// Generate the synthetic conurbation survey.
    Synth(SynthArgs),
    /// Label every observation as body or tail.
    Classify(ClassifyArgs),
    /// Fit the mixture (or the Gaussian baseline) and save the model.
    Fit(FitArgs),
    /// Predictive summaries on a grid from a saved model.
    Predict(PredictArgs),
    /// Monte Carlo exceedance probability map from a saved model.
    Risk(RiskArgs),
    /// k-fold cross-validation.
    Cv(CvArgs),
    /// Search the body probabilities (p1, p2) by DIC and CV error.
    Gridsearch(GridSearchArgs),
    /// Simulation study for one scenario.
    Scenario(ScenarioArgs),
}

macro_rules! to_settings {
    ($self:ident; $($opt:ident),*; flags: $($flag:ident),*) => {{
        let mut s = Settings::default();
        $( if $self.$opt.is_some() { s.$opt = $self.$opt.clone(); } )*
        $( if $self.$flag { s.$flag = Some(true); } )*
        s
    }};
}

#[derive(Args)]
struct GridArgs {
    /// CSV of prediction locations (`x,y,cov_1..`); otherwise a regular grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    x0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    x1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    y0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    y1: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
}

impl GridArgs {
    fn settings(&self) -> Settings {
        to_settings!(self; grid, x0, x1, y0, y1, nx, ny; flags:)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// A1, A2, B1 or B2.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// Cluster tail membership with this range instead of drawing it
    /// independently.
    #[arg(long)]
    clustered_range: Option<f64>,
    /// Include the true memberships as columns.
    #[arg(long)]
    with_membership: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    p2: Option<f64>,
    /// Votes per observation.
    #[arg(long)]
    votes: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Labels written by `classify`; otherwise the input's membership columns.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Fit the plain Gaussian model instead of the mixture.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    fixed_lambda: Option<f64>,
    /// Posterior draws for the DIC (0 skips it).
    #[arg(long)]
    dic_samples: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct RiskArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    t1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t2: Option<f64>,
    /// joint or conditional.
    #[arg(long)]
    mode: Option<String>,
    /// Monte Carlo repetitions R.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Draws per repetition m.
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    p2: Option<f64>,
    #[arg(long)]
    votes: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// mean, median or component.
    #[arg(long)]
    point: Option<String>,
    #[arg(long)]
    baseline: bool,
    /// Use the input's membership columns instead of classifying each fold.
    #[arg(long)]
    given_labels: bool,
}

#[derive(Args)]
struct GridSearchArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    p_min: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    p_step: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    dic_samples: Option<usize>,
    #[arg(long)]
    votes: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// A1, A2, B1 or B2.
    #[arg(long = "id")]
    scenario: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// 1000 replicates of 1000 sites unless overridden.
    #[arg(long)]
    full_scale: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Synth(_) => "synth",
            Command::Classify(_) => "classify",
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Risk(_) => "risk",
            Command::Cv(_) => "cv",
            Command::Gridsearch(_) => "gridsearch",
            Command::Scenario(_) => "scenario",
        }
    }

    fn settings(&self) -> Settings {
        match self {
            Command::Simulate(a) => to_settings!(a; scenario, n, clustered_range; flags: with_membership),
            Command::Synth(a) => to_settings!(a; n; flags:),
            Command::Classify(a) => to_settings!(a; input, p1, p2, votes; flags:),
            Command::Fit(a) => to_settings!(a; input, labels, smoothness, fixed_lambda, dic_samples; flags: baseline),
            Command::Predict(a) => to_settings!(a; model, samples; flags:).overlay(a.grid.settings()),
            Command::Risk(a) => {
                to_settings!(a; model, t1, t2, mode, repetitions, samples; flags:).overlay(a.grid.settings())
            }
            Command::Cv(a) => to_settings!(a; input, k, p1, p2, votes, samples, point; flags: baseline, given_labels),
            Command::Gridsearch(a) => {
                to_settings!(a; input, p_min, p_max, p_step, folds, dic_samples, votes, samples; flags:)
            }
            Command::Scenario(a) => to_settings!(a; scenario, replicates, n; flags: full_scale),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => match Settings::from_file(p) {
            Ok(s) => s,
            Err(e) => return usage(&e),
        },
        None => Settings::default(),
    };
    let global = Settings {
        out: cli.out.clone(),
        seed: cli.seed,
        threads: cli.threads,
        ..Settings::default()
    };
    let settings = file.overlay(cli.command.settings()).overlay(global);
    if let Err(e) = settings.validate() {
        return usage(&e);
    }
    if let Some(t) = settings.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            return usage(&format!("cannot start {t} threads: {e}"));
        }
    }
    match commands::run(cli.command.name(), &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => usage(&msg),
        Err(commands::Failure::Compute(e)) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("usage error: {msg}");
    ExitCode::from(2)
}
