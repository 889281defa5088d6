//! Spatial Bernoulli model for tail membership: `logit P(tail at s) = b + z(s)`
//! with a Matérn field `z` and a diffuse Gaussian prior on the intercept `b`,
//! fitted by the Laplace approximation.

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::mh::MembershipLabels;
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::randomfield::{correlation_matrix, matern_correlation, Locations};

/// Prior of the latent logit surface. A zero `variance` switches the
/// spatial field off, leaving an intercept-only logistic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipPrior {
    pub range: f64,
    pub variance: f64,
    pub smoothness: f64,
    pub intercept_variance: f64,
}

impl MembershipPrior {
    pub fn new(range: f64, variance: f64) -> Self {
        Self {
            range,
            variance,
            smoothness: 1.0,
            intercept_variance: 100.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) || !(self.variance >= 0.0) || !(self.smoothness > 0.0) || !(self.intercept_variance > 0.0) {
            return Err(Error::Domain(format!("invalid membership prior {self:?}")));
        }
        Ok(())
    }

    fn covariance(&self, locs: &Locations) -> Mat<f64> {
        let n = locs.len();
        let mut k = if self.variance > 0.0 {
            correlation_matrix(self.smoothness, self.range, locs) * faer::Scale(self.variance)
        } else {
            Mat::zeros(n, n)
        };
        for j in 0..n {
            for i in 0..n {
                k[(i, j)] += self.intercept_variance;
            }
        }
        k
    }

    fn cross(&self, a: &Locations, b: &Locations) -> Mat<f64> {
        Mat::from_fn(a.len(), b.len(), |i, j| {
            let d = a.get(i).distance(&b.get(j));
            let field = if self.variance > 0.0 {
                self.variance * matern_correlation(self.smoothness, self.range, d)
            } else {
                0.0
            };
            field + self.intercept_variance
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MembershipFieldConfig {
    /// Fixed prior; `None` selects range and variance by maximising the
    /// Laplace marginal likelihood.
    pub prior: Option<MembershipPrior>,
    pub max_newton: usize,
    pub gradient_tol: f64,
    /// Hyperparameter search runs on at most this many (evenly strided)
    /// observations; the final fit always uses all of them.
    pub tuning_points: usize,
}

impl Default for MembershipFieldConfig {
    fn default() -> Self {
        Self {
            prior: None,
            max_newton: 50,
            gradient_tol: 1e-8,
            tuning_points: 600,
        }
    }
}

/// Laplace posterior of the membership surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipField {
    pub locations: Locations,
    pub targets: Vec<f64>,
    pub prior: MembershipPrior,
    /// Posterior mode of the latent logit at the observations.
    pub mode: Vec<f64>,
    pub log_marginal: f64,
    #[serde(skip)]
    factor: Option<Cholesky>,
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^f)` without overflow.
fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

fn log_lik(t: &[f64], f: &[f64]) -> f64 {
    t.iter().zip(f).map(|(t, f)| t * f - softplus(*f)).sum()
}

struct LaplaceMode {
    f: Vec<f64>,
    factor: Cholesky,
    log_marginal: f64,
}

/// Newton iterations for the posterior mode (Rasmussen & Williams, Alg. 3.1)
/// with step halving whenever the objective would decrease.
fn laplace_mode(k: &Mat<f64>, t: &[f64], max_newton: usize, tol: f64) -> Result<LaplaceMode> {
    let n = t.len();
    let mut f = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut psi = log_lik(t, &f);
    for iter in 0..max_newton {
        let pi: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let sw: Vec<f64> = pi.iter().map(|p| (p * (1.0 - p)).sqrt()).collect();
        let b_mat = Mat::from_fn(n, n, |i, j| {
            sw[i] * k[(i, j)] * sw[j] + if i == j { 1.0 } else { 0.0 }
        });
        let chol = Cholesky::factor(&b_mat)?;
        let b: Vec<f64> = (0..n).map(|i| sw[i] * sw[i] * f[i] + (t[i] - pi[i])).collect();
        let kb = crate::linalg::mat_vec(k.as_ref(), &b);
        let swkb: Vec<f64> = (0..n).map(|i| sw[i] * kb[i]).collect();
        let inner = chol.solve_vec(&swkb);
        let a_new: Vec<f64> = (0..n).map(|i| b[i] - sw[i] * inner[i]).collect();
        // Damped update in `a`; `f = K a` keeps the iterate in the prior's span.
        let mut step = 1.0;
        let (mut a_try, mut f_try, mut psi_try);
        loop {
            a_try = (0..n).map(|i| a[i] + step * (a_new[i] - a[i])).collect::<Vec<_>>();
            f_try = crate::linalg::mat_vec(k.as_ref(), &a_try);
            psi_try = -0.5 * dot(&a_try, &f_try) + log_lik(t, &f_try);
            if psi_try >= psi - 1e-12 * psi.abs().max(1.0) || step < 1e-6 {
                break;
            }
            step *= 0.5;
        }
        let change = psi_try - psi;
        a = a_try;
        f = f_try;
        psi = psi_try;
        let grad = (0..n)
            .map(|i| (t[i] - sigmoid(f[i]) - a[i]).abs())
            .fold(0.0, f64::max);
        if grad < tol || (iter > 0 && change.abs() <= 1e-13 * psi.abs().max(1.0)) {
            let pi: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
            let sw: Vec<f64> = pi.iter().map(|p| (p * (1.0 - p)).sqrt()).collect();
            let b_mat = Mat::from_fn(n, n, |i, j| {
                sw[i] * k[(i, j)] * sw[j] + if i == j { 1.0 } else { 0.0 }
            });
            let factor = Cholesky::factor(&b_mat)?;
            let log_marginal = psi - 0.5 * factor.log_det();
            return Ok(LaplaceMode {
                f,
                factor,
                log_marginal,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_newton,
        last: f.iter().take(8).copied().collect(),
    })
}

fn targets_of(labels: &MembershipLabels) -> Result<Vec<f64>> {
    let t: Vec<f64> = labels.labels.iter().map(|m| if m.is_tail() { 1.0 } else { 0.0 }).collect();
    let tails = t.iter().filter(|&&v| v == 1.0).count();
    if tails == 0 || tails == t.len() {
        return Err(Error::DegenerateLabels(format!(
            "membership field needs both classes, got {tails} tail of {}",
            t.len()
        )));
    }
    Ok(t)
}

fn strided(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        return (0..n).collect();
    }
    let stride = n.div_ceil(limit);
    (0..n).step_by(stride).collect()
}

fn tune_prior(locs: &Locations, t: &[f64], cfg: &MembershipFieldConfig) -> Result<MembershipPrior> {
    let idx = strided(locs.len(), cfg.tuning_points.max(2));
    let sub = locs.subset(&idx);
    let ts: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
    if ts.iter().all(|&v| v == ts[0]) {
        // The strided subsample lost a class; fall back to a generic prior.
        return Ok(MembershipPrior::new(0.1 * locs.extent().max(1e-6), 1.0));
    }
    let extent = sub.extent().max(1e-6);
    let objective = |theta: &[f64]| -> f64 {
        let prior = MembershipPrior::new(theta[0].exp(), theta[1].exp());
        match laplace_mode(&prior.covariance(&sub), &ts, cfg.max_newton, cfg.gradient_tol) {
            Ok(m) => -m.log_marginal,
            Err(_) => f64::INFINITY,
        }
    };
    let mut best = (f64::INFINITY, [(0.1 * extent).ln(), 0.0]);
    for &r in &[0.02, 0.05, 0.1, 0.2, 0.4] {
        for &v in &[0.25, 1.0, 4.0] {
            let theta = [(r * extent).ln(), f64::ln(v)];
            let val = objective(&theta);
            if val < best.0 {
                best = (val, theta);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Convergence {
            iterations: 15,
            last: best.1.to_vec(),
        });
    }
    let lo = [(1e-3 * extent).ln(), (1e-3f64).ln()];
    let hi = [(2.0 * extent).ln(), (50.0f64).ln()];
    let bounded = |theta: &[f64]| -> f64 {
        if theta.iter().zip(lo.iter().zip(&hi)).any(|(v, (l, h))| v < l || v > h) {
            return f64::INFINITY;
        }
        objective(theta)
    };
    let polished = nelder_mead(
        bounded,
        &best.1,
        &[0.3, 0.5],
        NelderMeadOptions {
            max_iterations: 30,
            f_tol: 1e-4,
            x_tol: 1e-3,
        },
    );
    let theta = if polished.value < best.0 { polished.x } else { best.1.to_vec() };
    Ok(MembershipPrior::new(theta[0].exp(), theta[1].exp()))
}

pub fn fit_membership_field(
    locs: &Locations,
    labels: &MembershipLabels,
    cfg: &MembershipFieldConfig,
) -> Result<MembershipField> {
    if locs.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} locations but {} labels",
            locs.len(),
            labels.len()
        )));
    }
    let t = targets_of(labels)?;
    let prior = match cfg.prior {
        Some(p) => {
            p.validate()?;
            p
        }
        None => tune_prior(locs, &t, cfg)?,
    };
    let mode = laplace_mode(&prior.covariance(locs), &t, cfg.max_newton, cfg.gradient_tol)?;
    Ok(MembershipField {
        locations: locs.clone(),
        targets: t,
        prior,
        mode: mode.f,
        log_marginal: mode.log_marginal,
        factor: Some(mode.factor),
    })
}

impl MembershipField {
    /// Recompute the factorisation after deserialisation.
    pub fn restore(&mut self) -> Result<()> {
        if self.factor.is_none() {
            let n = self.targets.len();
            let k = self.prior.covariance(&self.locations);
            let sw: Vec<f64> = self.mode.iter().map(|&f| {
                let p = sigmoid(f);
                (p * (1.0 - p)).sqrt()
            }).collect();
            let b = Mat::from_fn(n, n, |i, j| sw[i] * k[(i, j)] * sw[j] + if i == j { 1.0 } else { 0.0 });
            self.factor = Some(Cholesky::factor(&b)?);
        }
        Ok(())
    }

    /// Predictive tail probability at each grid point (probit approximation
    /// to the logistic-Gaussian integral).
    pub fn predict(&self, grid: &Locations) -> Result<Vec<f64>> {
        let factor = match &self.factor {
            Some(f) => f,
            None => {
                return Err(Error::Input(
                    "membership field must be restored before prediction".into(),
                ))
            }
        };
        let n = self.targets.len();
        let pi: Vec<f64> = self.mode.iter().map(|&f| sigmoid(f)).collect();
        let sw: Vec<f64> = pi.iter().map(|p| (p * (1.0 - p)).sqrt()).collect();
        let resid: Vec<f64> = (0..n).map(|i| self.targets[i] - pi[i]).collect();
        let kx = self.prior.cross(&self.locations, grid);
        let mut scaled = kx.clone();
        for j in 0..grid.len() {
            for i in 0..n {
                scaled[(i, j)] *= sw[i];
            }
        }
        let v = factor.whiten(&scaled);
        let prior_var = self.prior.variance + self.prior.intercept_variance;
        Ok((0..grid.len())
            .map(|j| {
                let mean: f64 = (0..n).map(|i| kx[(i, j)] * resid[i]).sum();
                let var = (prior_var - (0..n).map(|i| v[(i, j)] * v[(i, j)]).sum::<f64>()).max(0.0);
                let kappa = 1.0 / (1.0 + std::f64::consts::PI * var / 8.0).sqrt();
                sigmoid(kappa * mean).clamp(1e-12, 1.0 - 1e-12)
            })
            .collect())
    }
}

pub fn predict_membership(model: &MembershipField, grid: &Locations) -> Result<Vec<f64>> {
    model.predict(grid)
}
