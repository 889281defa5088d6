//! Simulation studies and model checking: scenario replicates with
//! coverage/RMSE tables, k-fold cross-validation and the search over the
//! mixture proportions.

mod cv;
mod grid;
mod scenario;

pub use cv::{assign_folds, kfold_cv, CvConfig, CvResult, FoldRecord, HeldOutPrediction, PointPrediction};
pub use grid::{default_p_grid, grid_search_p, select_cell, GridCell, GridSearchConfig, GridSearchResult};
pub use scenario::{
    run_replicate, run_scenario, scenario_model, true_values, QqRow, ReplicateFailure, ReplicateRecord, ScenarioId,
    ScenarioResult, ScenarioSpec, SummaryRow, VariableClassification, SUMMARY_PARAMETERS,
};

use crate::error::{Error, Result};

/// Root mean squared error of `estimates` against one true value.
pub fn rmse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Input("RMSE of an empty set of estimates".into()));
    }
    let ss: f64 = estimates.iter().map(|e| (e - truth).powi(2)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// Root mean squared error against per-element true values.
pub fn rmse_paired(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Input("RMSE of an empty set of estimates".into()));
    }
    if estimates.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} estimates against {} true values",
            estimates.len(),
            truth.len()
        )));
    }
    let ss: f64 = estimates.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// Fraction of closed intervals `[lo, hi]` that contain `truth`.
pub fn coverage_probability(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Input("coverage of an empty set of intervals".into()));
    }
    let mut hits = 0usize;
    for (i, &(lo, hi)) in intervals.iter().enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Input(format!("interval {i} is malformed: [{lo}, {hi}]")));
        }
        hits += usize::from(lo <= truth && truth <= hi);
    }
    Ok(hits as f64 / intervals.len() as f64)
}
