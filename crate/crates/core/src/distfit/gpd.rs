use serde::{Deserialize, Serialize};

use super::normal::{std_normal_cdf, std_normal_quantile, std_normal_sf};
use crate::error::{Error, Result};
use crate::optim::{golden_section, nelder_mead, numerical_hessian, NelderMeadOptions};

/// Below this magnitude the shape is treated as zero and the exponential
/// limit is used.
pub const SHAPE_ZERO: f64 = 1e-9;

/// Generalised Pareto tail above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub threshold: f64,
    pub scale: f64,
    pub shape: f64,
}

impl GpdParams {
    pub fn new(threshold: f64, scale: f64, shape: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Domain(format!("GPD scale must be positive, got {scale}")));
        }
        if !threshold.is_finite() || !shape.is_finite() {
            return Err(Error::Domain("GPD threshold and shape must be finite".into()));
        }
        Ok(Self {
            threshold,
            scale,
            shape,
        })
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self { threshold, ..self }
    }

    /// Upper end point of the support (infinite for non-negative shape).
    pub fn upper_endpoint(&self) -> f64 {
        if self.shape < 0.0 {
            self.threshold - self.scale / self.shape
        } else {
            f64::INFINITY
        }
    }

    /// Standardised exceedance `(y - u) / sigma`, checked against the support.
    fn standardise(&self, y: f64) -> Result<f64> {
        let z = (y - self.threshold) / self.scale;
        if !(z >= 0.0) {
            return Err(Error::Domain(format!(
                "{y} lies below the GPD threshold {}",
                self.threshold
            )));
        }
        if self.shape < 0.0 && 1.0 + self.shape * z <= 0.0 {
            return Err(Error::Domain(format!(
                "{y} lies beyond the GPD upper end point {}",
                self.upper_endpoint()
            )));
        }
        Ok(z)
    }

    /// `log(1 + xi z) / xi`, i.e. minus the log survival function.
    fn cumulative_hazard(&self, z: f64) -> f64 {
        if self.shape.abs() < SHAPE_ZERO {
            z
        } else {
            (self.shape * z).ln_1p() / self.shape
        }
    }
}

/// Distribution function of the exceedance `y - u`.
pub fn gpd_cdf(params: &GpdParams, y: f64) -> Result<f64> {
    let z = params.standardise(y)?;
    Ok(-(-params.cumulative_hazard(z)).exp_m1())
}

/// Survival function `1 - H(y - u)`, accurate far into the tail.
pub fn gpd_sf(params: &GpdParams, y: f64) -> Result<f64> {
    let z = params.standardise(y)?;
    Ok((-params.cumulative_hazard(z)).exp())
}

pub fn gpd_ln_pdf(params: &GpdParams, y: f64) -> Result<f64> {
    let z = params.standardise(y)?;
    let xi = params.shape;
    let log_kernel = if xi.abs() < SHAPE_ZERO {
        -z
    } else {
        -(1.0 / xi + 1.0) * (xi * z).ln_1p()
    };
    Ok(log_kernel - params.scale.ln())
}

pub fn gpd_pdf(params: &GpdParams, y: f64) -> Result<f64> {
    gpd_ln_pdf(params, y).map(f64::exp)
}

/// Exceedance above the threshold whose log survival probability is `ln_s`.
fn excess_from_ln_sf(params: &GpdParams, ln_s: f64) -> f64 {
    let xi = params.shape;
    if xi.abs() < SHAPE_ZERO {
        -params.scale * ln_s
    } else {
        params.scale * (-xi * ln_s).exp_m1() / xi
    }
}

/// Inverse of [`gpd_cdf`] for `q` in `[0, 1)`.
pub fn gpd_quantile(params: &GpdParams, q: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("GPD quantile level {q} outside [0, 1)")));
    }
    Ok(params.threshold + excess_from_ln_sf(params, (-q).ln_1p()))
}

/// Inverse of [`gpd_sf`] for survival probability `s` in `(0, 1]`.
pub fn gpd_isf(params: &GpdParams, s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Domain(format!("GPD survival level {s} outside (0, 1]")));
    }
    Ok(params.threshold + excess_from_ln_sf(params, s.ln()))
}

/// Probability integral transform of a tail value onto the standard normal
/// scale: `Phi^{-1}(H(y - u))`.
pub fn tail_to_gaussian(params: &GpdParams, y: f64) -> Result<f64> {
    let z = params.standardise(y)?;
    let ch = params.cumulative_hazard(z);
    // Work from whichever side of the median keeps precision.
    let s = (-ch).exp();
    if s < 0.5 {
        Ok(-std_normal_quantile(s))
    } else {
        Ok(std_normal_quantile(-(-ch).exp_m1()))
    }
}

/// Inverse of [`tail_to_gaussian`]; defined for every real `w`.
pub fn gaussian_to_tail(params: &GpdParams, w: f64) -> f64 {
    if w == f64::NEG_INFINITY {
        return params.threshold;
    }
    if w == f64::INFINITY {
        return params.upper_endpoint();
    }
    let ln_s = if w > 0.0 {
        std_normal_sf(w).ln()
    } else {
        (-std_normal_cdf(w)).ln_1p()
    };
    params.threshold + excess_from_ln_sf(params, ln_s)
}

/// Fitted GPD with the observed-information covariance of `(ln sigma, xi)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpdFit {
    pub params: GpdParams,
    pub log_likelihood: f64,
    pub n: usize,
    /// Estimate sits at the edge of the admissible shape interval.
    pub at_boundary: bool,
    pub covariance: [[f64; 2]; 2],
}

impl GpdFit {
    /// Wald interval for the scale, built on the log scale.
    pub fn scale_interval(&self, z: f64) -> (f64, f64) {
        let sd = self.covariance[0][0].max(0.0).sqrt();
        let ls = self.params.scale.ln();
        ((ls - z * sd).exp(), (ls + z * sd).exp())
    }

    pub fn shape_interval(&self, z: f64) -> (f64, f64) {
        let sd = self.covariance[1][1].max(0.0).sqrt();
        (self.params.shape - z * sd, self.params.shape + z * sd)
    }
}

pub const MIN_EXCEEDANCES: usize = 10;
const SHAPE_BOUND: f64 = 1.0;

/// GPD log-likelihood of exceedances at `(sigma, xi)`; `-inf` outside the
/// support.
pub fn gpd_log_likelihood(exceedances: &[f64], scale: f64, shape: f64) -> f64 {
    if !(scale > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = exceedances.len() as f64;
    let mut acc = -n * scale.ln();
    if shape.abs() < SHAPE_ZERO {
        acc -= exceedances.iter().sum::<f64>() / scale;
        return acc;
    }
    let k = 1.0 / shape + 1.0;
    for &x in exceedances {
        let t = shape * x / scale;
        if t <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc -= k * t.ln_1p();
    }
    acc
}

fn nll_transformed(exceedances: &[f64], theta: &[f64]) -> f64 {
    let shape = theta[1];
    if shape <= -SHAPE_BOUND || shape >= SHAPE_BOUND {
        return f64::INFINITY;
    }
    -gpd_log_likelihood(exceedances, theta[0].exp(), shape)
}

/// Maximum-likelihood GPD fit to positive exceedances.
///
/// Nelder–Mead runs on `(ln sigma, xi)` with `xi` held inside `(-1, 1)`.
/// When the simplex search fails to converge a profile likelihood over the
/// shape is used instead.
pub fn gpd_mle(exceedances: &[f64]) -> Result<GpdFit> {
    let n = exceedances.len();
    if n < MIN_EXCEEDANCES {
        return Err(Error::insufficient("GPD fit (exceedances)", MIN_EXCEEDANCES, n));
    }
    if let Some(bad) = exceedances.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("exceedances must be positive and finite, got {bad}")));
    }

    let mean = exceedances.iter().sum::<f64>() / n as f64;
    let var = exceedances.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let max = exceedances.iter().cloned().fold(f64::MIN, f64::max);

    let mut starts = vec![[mean.ln(), 0.0]];
    if var > 0.0 {
        let ratio = mean * mean / var;
        let xi0 = (0.5 * (1.0 - ratio)).clamp(-0.45, 0.9);
        let mut sigma0 = 0.5 * mean * (ratio + 1.0);
        if xi0 < 0.0 {
            sigma0 = sigma0.max(-xi0 * max * 1.05);
        }
        starts.push([sigma0.ln(), xi0]);
    }
    let objective = |theta: &[f64]| nll_transformed(exceedances, theta);
    let best_start = starts
        .iter()
        .min_by(|a, b| objective(&a[..]).total_cmp(&objective(&b[..])))
        .copied()
        .unwrap_or(starts[0]);

    let opts = NelderMeadOptions {
        max_iterations: 4000,
        f_tol: 1e-11,
        x_tol: 1e-9,
    };
    let mut found = nelder_mead(objective, &best_start, &[0.2, 0.1], opts);
    // Restart once from the returned point: cheap insurance against a
    // collapsed simplex.
    if found.converged {
        let again = nelder_mead(objective, &found.x, &[0.05, 0.05], opts);
        if again.value <= found.value {
            found = again;
        }
    }

    let (theta, value) = if found.converged && found.value.is_finite() {
        (found.x.clone(), found.value)
    } else {
        match profile_fit(exceedances) {
            Some(r) => r,
            None => {
                return Err(Error::Convergence {
                    iterations: found.iterations,
                    last: vec![found.x[0].exp(), found.x[1]],
                })
            }
        }
    };

    let at_boundary = theta[1] <= -SHAPE_BOUND + 1e-3 || theta[1] >= SHAPE_BOUND - 1e-3;
    let covariance = observed_information_inverse(exceedances, &theta);
    Ok(GpdFit {
        params: GpdParams {
            threshold: 0.0,
            scale: theta[0].exp(),
            shape: theta[1],
        },
        log_likelihood: -value,
        n,
        at_boundary,
        covariance,
    })
}

/// Profile likelihood over the shape, each shape maximised over `ln sigma`.
fn profile_fit(exceedances: &[f64]) -> Option<(Vec<f64>, f64)> {
    let max = exceedances.iter().cloned().fold(f64::MIN, f64::max);
    let mean = exceedances.iter().sum::<f64>() / exceedances.len() as f64;
    let inner = |xi: f64| -> (f64, f64) {
        // Admissible scales satisfy sigma > -xi * max for negative shapes.
        let lo = if xi < 0.0 {
            (-xi * max).ln() + 1e-10
        } else {
            (mean * 1e-3).ln()
        };
        let hi = (mean * 1e3).ln().max(lo + 1.0);
        golden_section(|ls| nll_transformed(exceedances, &[ls, xi]), lo, hi, 1e-10)
    };
    let (xi, value) = golden_section(
        |xi| inner(xi).1,
        -SHAPE_BOUND + 1e-6,
        SHAPE_BOUND - 1e-6,
        1e-9,
    );
    let (ls, _) = inner(xi);
    value.is_finite().then(|| (vec![ls, xi], value))
}

fn observed_information_inverse(exceedances: &[f64], theta: &[f64]) -> [[f64; 2]; 2] {
    let h = numerical_hessian(|t| nll_transformed(exceedances, t), theta, 1e-4);
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if det > 0.0 && h[0][0] > 0.0 && det.is_finite() {
        [
            [h[1][1] / det, -h[0][1] / det],
            [-h[1][0] / det, h[0][0] / det],
        ]
    } else {
        // Flat or indefinite curvature: report an uninformative interval.
        [[1e4, 0.0], [0.0, 1e4]]
    }
}
