//! The bivariate body/tail mixture: data model and simulation, the
//! transform to a Gaussian working scale, and estimation.

mod engine;
mod fit;
mod model;
mod working;

pub use engine::{Hyper, Layout, ModelKind, Structure};
pub use fit::{
    fit, fit_gaussian_baseline, log_marginal_gradient, log_marginal_likelihood, DicReport, FitConfig, FittedModel,
    LatentPrediction, OptimiserReport, ParameterEstimate, FORMAT_VERSION,
};
pub use model::{
    linear_predictor, simulate_dataset, simulate_dataset_with, Component, CoregMixModel, MembershipDesign, Region,
    SpatialDataset, TruthRecord,
};
pub use working::{build_conditional_likelihood, WorkingData, WorkingRow};
