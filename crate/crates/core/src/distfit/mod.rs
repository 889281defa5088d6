//! Univariate distributions: Gaussian and generalised Pareto densities,
//! maximum-likelihood fitting, the tail-to-Gaussian transform and moment
//! summaries.

mod gpd;
mod moments;
pub mod normal;

pub use gpd::{
    gaussian_to_tail, gpd_cdf, gpd_isf, gpd_ln_pdf, gpd_log_likelihood, gpd_mle, gpd_pdf,
    gpd_quantile, gpd_sf, tail_to_gaussian, GpdFit, GpdParams, MIN_EXCEEDANCES, SHAPE_ZERO,
};
pub use moments::{excess_kurtosis, kurtosis, GaussianParams};
pub use normal::{std_normal_cdf, std_normal_quantile};
