use serde::{Deserialize, Serialize};

use super::model::{Component, SpatialDataset};
use crate::classify::MembershipLabels;
use crate::distfit::{gaussian_to_tail, tail_to_gaussian, GpdParams};
use crate::error::{Error, Result};
use crate::randomfield::Locations;

/// One observation on the Gaussian working scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingRow {
    pub site: usize,
    pub component: Component,
    pub value: f64,
    pub original: f64,
}

/// Both responses on the working scale, one row per (site, variable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingData {
    pub locations: Locations,
    pub covariates: Vec<Vec<f64>>,
    pub rows: Vec<WorkingRow>,
    /// Tail distributions used for the transform; `None` when every row is
    /// taken as is.
    pub tails: Option<[GpdParams; 2]>,
}

impl WorkingData {
    /// Every row as a body row on the original scale (the plain Gaussian
    /// model).
    pub fn untransformed(data: &SpatialDataset) -> Self {
        let mut rows = Vec::with_capacity(2 * data.len());
        for var in 0..2 {
            let c = if var == 0 { Component::B1 } else { Component::B2 };
            for (site, &y) in data.y[var].iter().enumerate() {
                rows.push(WorkingRow {
                    site,
                    component: c,
                    value: y,
                    original: y,
                });
            }
        }
        Self {
            locations: data.locations.clone(),
            covariates: data.covariates.clone(),
            rows,
            tails: None,
        }
    }

    pub fn count(&self, c: Component) -> usize {
        self.rows.iter().filter(|r| r.component == c).count()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    /// Original-scale value of a working value for component `c`.
    pub fn back_transform(&self, c: Component, w: f64) -> f64 {
        match (&self.tails, c.is_tail()) {
            (Some(t), true) => gaussian_to_tail(&t[c.variable()], w),
            _ => w,
        }
    }

    /// Working-scale variance of each variable's rows.
    pub fn variable_variance(&self, var: usize) -> f64 {
        let mut vals: Vec<f64> = self.rows.iter().filter(|r| r.component.variable() == var).map(|r| r.value).collect();
        vals.sort_by(f64::total_cmp);
        if vals.len() < 2 {
            return 1.0;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        if v > 0.0 {
            v
        } else {
            1.0
        }
    }
}

/// Tail-labelled values move to the Gaussian scale through their GPD;
/// body values pass through unchanged.
pub fn build_conditional_likelihood(
    data: &SpatialDataset,
    labels: [&MembershipLabels; 2],
    tails: [GpdParams; 2],
) -> Result<WorkingData> {
    let mut rows = Vec::with_capacity(2 * data.len());
    for var in 0..2 {
        if labels[var].len() != data.len() {
            return Err(Error::Input(format!(
                "variable {} has {} labels for {} sites",
                var + 1,
                labels[var].len(),
                data.len()
            )));
        }
        for (site, (&y, m)) in data.y[var].iter().zip(&labels[var].labels).enumerate() {
            let component = Component::of(var, *m);
            let value = if component.is_tail() {
                if !(y > tails[var].threshold) {
                    return Err(Error::InconsistentLabels(format!(
                        "variable {} row {site}: tail-labelled value {y} is not above the threshold {}",
                        var + 1,
                        tails[var].threshold
                    )));
                }
                tail_to_gaussian(&tails[var], y).map_err(|e| {
                    Error::InconsistentLabels(format!("variable {} row {site}: {e}", var + 1))
                })?
            } else {
                y
            };
            rows.push(WorkingRow {
                site,
                component,
                value,
                original: y,
            });
        }
    }
    Ok(WorkingData {
        locations: data.locations.clone(),
        covariates: data.covariates.clone(),
        rows,
        tails: Some(tails),
    })
}
