use serde::{Deserialize, Serialize};

use super::normal::normal_ln_pdf;
use crate::error::{Error, Result};

/// Normal body distribution `N(mean, sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::Domain(format!("invalid normal parameters ({mean}, {sd})")));
        }
        Ok(Self { mean, sd })
    }

    /// Maximum-likelihood fit (divisor `n` for the variance).
    pub fn mle(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::insufficient("normal fit", 2, values.len()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self::new(mean, var.sqrt())
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        normal_ln_pdf(x, self.mean, self.sd)
    }
}

/// Moment kurtosis `m4 / m2^2` (3 for a normal sample).
pub fn kurtosis(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::insufficient("kurtosis", 4, values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d2 = (v - mean).powi(2);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if !(m2 > f64::EPSILON * mean.abs().max(1.0).powi(2) * 1e-6) {
        return Err(Error::Domain("kurtosis of a sample with zero variance".into()));
    }
    Ok(m4 / (m2 * m2))
}

pub fn excess_kurtosis(values: &[f64]) -> Result<f64> {
    kurtosis(values).map(|k| k - 3.0)
}
