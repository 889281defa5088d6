use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::engine::{build_groups, objective, Group, GroupPosterior, Hyper, Layout, ModelKind, Structure};
use super::model::{Component, SpatialDataset};
use super::working::{build_conditional_likelihood, WorkingData};
use crate::classify::{Membership, MembershipLabels};
use crate::distfit::normal::std_normal_ln_pdf;
use crate::distfit::{gpd_ln_pdf, gpd_mle, GpdFit, MIN_EXCEEDANCES};
use crate::error::{Error, Result};
use crate::linalg::{mat_from_rows, sym_eigen};
use crate::optim::{bfgs, BfgsOptions};
use crate::randomfield::Locations;
use crate::seeds::{self, stream};

pub const FORMAT_VERSION: u32 = 1;
const Z95: f64 = 1.959_963_984_540_054;
/// Smallest curvature admitted when inverting the Hessian: caps every
/// hyperparameter standard deviation at 20 on the optimisation scale.
const MIN_CURVATURE: f64 = 1.0 / 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kind: ModelKind,
    pub spatial: bool,
    pub covariates: bool,
    pub smoothness: f64,
    /// Hold `lambda` at this value instead of estimating it.
    pub fixed_lambda: Option<f64>,
    /// Skip optimisation and condition on these hyperparameters.
    pub fixed_hyper: Option<Hyper>,
    /// Replace the default starts with this single start.
    pub warm_start: Option<Hyper>,
    pub start_iterations: usize,
    pub max_iterations: usize,
    /// Compute the observed-information covariance of `theta`. Prediction
    /// alone does not need it.
    pub covariance: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mixture,
            spatial: true,
            covariates: true,
            smoothness: 1.0,
            fixed_lambda: None,
            fixed_hyper: None,
            warm_start: None,
            start_iterations: 10,
            max_iterations: 200,
            covariance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParameterEstimate {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimiserReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub starts: Vec<f64>,
}

/// A fitted model: everything needed to rebuild the exact posterior.
///
/// Factorisations are not serialised; [`FittedModel::restore`] recomputes
/// them deterministically from the stored working data and hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub structure: Structure,
    pub layout: Layout,
    pub hyper: Hyper,
    pub theta_names: Vec<String>,
    pub theta: Vec<f64>,
    pub theta_covariance: Vec<Vec<f64>>,
    pub tails: Option<[GpdFit; 2]>,
    /// Body probabilities behind the labels.
    pub p: [f64; 2],
    pub covariate_names: Vec<String>,
    pub working: WorkingData,
    pub log_marginal: f64,
    pub optimiser: OptimiserReport,
    #[serde(skip)]
    state: Vec<(Group, GroupPosterior)>,
}

/// Fit the body/tail mixture given memberships for both variables.
pub fn fit(data: &SpatialDataset, labels: [&MembershipLabels; 2], config: &FitConfig) -> Result<FittedModel> {
    if config.kind != ModelKind::Mixture {
        return fit_gaussian_baseline(data, config);
    }
    let mut fits = Vec::with_capacity(2);
    for var in 0..2 {
        let l = labels[var];
        if l.len() != data.len() {
            return Err(Error::Input(format!(
                "variable {} has {} labels for {} sites",
                var + 1,
                l.len(),
                data.len()
            )));
        }
        let tail_rows = l.tail_count();
        if tail_rows < MIN_EXCEEDANCES {
            return Err(Error::insufficient(
                format!("tail rows of variable {}", var + 1),
                MIN_EXCEEDANCES,
                tail_rows,
            ));
        }
        let u = l.threshold;
        let mut exceed: Vec<f64> = data.y[var].iter().filter(|&&y| y > u).map(|y| y - u).collect();
        // Sorted so that the fit does not depend on row order.
        exceed.sort_by(f64::total_cmp);
        let mut f = gpd_mle(&exceed)?;
        f.params = f.params.with_threshold(u);
        fits.push(f);
    }
    let tails: [GpdFit; 2] = [fits[0].clone(), fits[1].clone()];
    let working = build_conditional_likelihood(data, labels, [tails[0].params, tails[1].params])?;
    fit_working(working, Some(tails), [labels[0].p, labels[1].p], data.covariate_names.clone(), config)
}

/// The comparison model: each variable Gaussian on its original scale.
pub fn fit_gaussian_baseline(data: &SpatialDataset, config: &FitConfig) -> Result<FittedModel> {
    let config = FitConfig {
        kind: ModelKind::GaussianBaseline,
        ..config.clone()
    };
    fit_working(WorkingData::untransformed(data), None, [1.0, 1.0], data.covariate_names.clone(), &config)
}

/// Box constraints on `theta`, handled by a logistic reparameterisation.
struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn new(st: &Structure, layout: &Layout, working: &WorkingData) -> Self {
        let extent = working.locations.extent().max(f64::MIN_POSITIVE);
        let s2 = [working.variable_variance(0), working.variable_variance(1)];
        let mut lo = Vec::with_capacity(layout.dim());
        let mut hi = Vec::with_capacity(layout.dim());
        for _ in 0..layout.n_ranges {
            lo.push((0.01 * extent).ln());
            hi.push((5.0 * extent).ln());
        }
        for f in 0..layout.n_fields {
            let s = s2[st.field_variable(f)];
            lo.push((1e-4 * s).ln());
            hi.push((20.0 * s).ln());
        }
        for s in s2 {
            lo.push(-(5.0 * s).ln());
            hi.push(-(1e-5 * s).ln());
        }
        if layout.lambda_free {
            lo.push(-5.0);
            hi.push(5.0);
        }
        Self { lo, hi }
    }

    fn to_phi(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let u = ((t - self.lo[i]) / (self.hi[i] - self.lo[i])).clamp(1e-6, 1.0 - 1e-6);
                (u / (1.0 - u)).ln()
            })
            .collect()
    }

    fn to_theta(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut theta = Vec::with_capacity(phi.len());
        let mut jac = Vec::with_capacity(phi.len());
        for (i, p) in phi.iter().enumerate() {
            let s = 1.0 / (1.0 + (-p).exp());
            let w = self.hi[i] - self.lo[i];
            theta.push(self.lo[i] + w * s);
            jac.push(w * s * (1.0 - s));
        }
        (theta, jac)
    }
}

fn start_hyper(st: &Structure, working: &WorkingData, range_frac: f64, var_frac: f64, noise_frac: f64, lambda: f64) -> Hyper {
    let extent = working.locations.extent();
    let s2 = [working.variable_variance(0), working.variable_variance(1)];
    Hyper {
        ranges: vec![range_frac * extent; st.n_ranges()],
        variances: (0..st.n_fields()).map(|f| var_frac * s2[st.field_variable(f)]).collect(),
        tau: [1.0 / (noise_frac * s2[0]), 1.0 / (noise_frac * s2[1])],
        lambda,
    }
}

pub(crate) fn fit_working(
    working: WorkingData,
    tails: Option<[GpdFit; 2]>,
    p: [f64; 2],
    covariate_names: Vec<String>,
    config: &FitConfig,
) -> Result<FittedModel> {
    if !(config.smoothness > 0.0) {
        return Err(Error::Domain(format!("smoothness must be positive, got {}", config.smoothness)));
    }
    let st = Structure {
        kind: config.kind,
        spatial: config.spatial,
        covariates: config.covariates,
        smoothness: config.smoothness,
        n_covariates: working.n_covariates(),
    };
    let layout = Layout::new(&st, config.fixed_lambda.or(config.fixed_hyper.as_ref().map(|h| h.lambda)));
    let groups = build_groups(&st, &working)?;
    for g in &groups {
        let needed = g.x.ncols() + 1;
        if g.len() < needed {
            let names: Vec<String> = g.predictors.iter().map(|&p| st.predictor_name(p)).collect();
            return Err(Error::insufficient(format!("rows of {}", names.join("+")), needed, g.len()));
        }
    }

    let (theta, optimiser) = match &config.fixed_hyper {
        Some(h) => (
            layout.to_theta(h),
            OptimiserReport {
                iterations: 0,
                evaluations: 0,
                converged: true,
                starts: Vec::new(),
            },
        ),
        None => optimise(&st, &layout, &groups, &working, config)?,
    };

    let theta_covariance = if config.fixed_hyper.is_some() || !config.covariance {
        vec![vec![0.0; theta.len()]; theta.len()]
    } else {
        hessian_covariance(&st, &layout, &groups, &theta)?
    };
    let hyper = layout.from_theta(&theta);
    let mut model = FittedModel {
        format_version: FORMAT_VERSION,
        structure: st,
        layout,
        theta_names: layout.names(&st),
        theta,
        theta_covariance,
        hyper,
        tails,
        p,
        covariate_names,
        working,
        log_marginal: 0.0,
        optimiser,
        state: Vec::new(),
    };
    model.restore()?;
    model.log_marginal = model.state.iter().map(|(_, post)| post.loglik).sum();
    Ok(model)
}

fn optimise(
    st: &Structure,
    layout: &Layout,
    groups: &[Group],
    working: &WorkingData,
    config: &FitConfig,
) -> Result<(Vec<f64>, OptimiserReport)> {
    let bounds = Bounds::new(st, layout, working);
    let neg = |phi: &[f64]| -> (f64, Vec<f64>) {
        let (theta, jac) = bounds.to_theta(phi);
        match objective(st, layout, groups, &theta, true) {
            Ok((v, g)) => (-v, g.iter().zip(&jac).map(|(g, j)| -g * j).collect()),
            Err(_) => (f64::INFINITY, vec![0.0; phi.len()]),
        }
    };
    let mut starts: Vec<Hyper> = match &config.warm_start {
        Some(h) => vec![h.clone()],
        None => vec![
            start_hyper(st, working, 0.1, 0.5, 0.1, 0.0),
            start_hyper(st, working, 0.3, 1.0, 0.5, 0.5),
            start_hyper(st, working, 0.15, 0.9, 0.02, 0.9),
        ],
    };
    if !layout.lambda_free {
        for s in &mut starts {
            s.lambda = layout.fixed_lambda;
        }
    }
    let short = BfgsOptions {
        max_iterations: config.start_iterations,
        ..BfgsOptions::default()
    };
    let mut best: Option<crate::optim::Minimum> = None;
    let mut start_values = Vec::with_capacity(starts.len());
    let mut evaluations = 0;
    for h in &starts {
        let phi0 = bounds.to_phi(&layout.to_theta(h));
        let m = if starts.len() == 1 {
            bfgs(neg, &phi0, BfgsOptions { max_iterations: config.max_iterations, ..BfgsOptions::default() })
        } else {
            bfgs(neg, &phi0, short)
        };
        evaluations += m.evaluations;
        start_values.push(-m.value);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let mut best = best.expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::Conditioning("objective is not finite at any start".into()));
    }
    let mut iterations = best.iterations;
    if starts.len() > 1 && !(best.converged && best.iterations < config.start_iterations) {
        let more = bfgs(
            neg,
            &best.x,
            BfgsOptions {
                max_iterations: config.max_iterations.saturating_sub(best.iterations),
                ..BfgsOptions::default()
            },
        );
        evaluations += more.evaluations;
        iterations += more.iterations;
        if more.value <= best.value {
            best = more;
        }
    }
    let (theta, _) = bounds.to_theta(&best.x);
    let (_, g) = neg(&best.x);
    let small_gradient = g.iter().all(|v| v.abs() < 1e-2);
    if !best.converged && !small_gradient {
        return Err(Error::Convergence { iterations, last: theta });
    }
    Ok((
        theta,
        OptimiserReport {
            iterations,
            evaluations,
            converged: best.converged,
            starts: start_values,
        },
    ))
}

/// Inverse observed information of `theta` from central differences of the
/// analytic gradient, with curvature floored at [`MIN_CURVATURE`].
fn hessian_covariance(st: &Structure, layout: &Layout, groups: &[Group], theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = theta.len();
    let h = 1e-4;
    let mut hess = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += h;
        tm[j] -= h;
        let (_, gp) = objective(st, layout, groups, &tp, true)?;
        let (_, gm) = objective(st, layout, groups, &tm, true)?;
        for i in 0..d {
            hess[i][j] = -(gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    if hess.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("hyperparameter Hessian is not finite".into()));
    }
    let (vals, vecs) = sym_eigen(&mat_from_rows(&hess))?;
    let inv: Vec<f64> = vals.iter().map(|v| 1.0 / v.max(MIN_CURVATURE)).collect();
    Ok((0..d)
        .map(|i| (0..d).map(|j| (0..d).map(|k| vecs[(i, k)] * inv[k] * vecs[(j, k)]).sum()).collect())
        .collect())
}

/// Posterior mean and covariance of every linear predictor at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPrediction {
    pub mean: Vec<f64>,
    /// Row-major, `n_predictors` square; zero between independent groups.
    pub cov: Vec<f64>,
}

/// Deviance information criterion and its pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub dic: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub effective_parameters: f64,
    /// Monte Carlo standard error of `dic`.
    pub mc_se: f64,
    pub samples: usize,
}

impl FittedModel {
    /// Rebuild factorisations after deserialisation.
    pub fn restore(&mut self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "fitted model format {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let groups = build_groups(&self.structure, &self.working)?;
        self.state = groups
            .into_iter()
            .map(|g| {
                let post = g.evaluate(&self.structure, &self.layout, &self.hyper, None)?;
                Ok((g, post))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn is_restored(&self) -> bool {
        !self.state.is_empty()
    }

    fn state(&self) -> Result<&[(Group, GroupPosterior)]> {
        if self.state.is_empty() {
            return Err(Error::Input("fitted model has no posterior; call restore() after loading".into()));
        }
        Ok(&self.state)
    }

    pub fn n_predictors(&self) -> usize {
        self.structure.n_predictors()
    }

    pub fn n_covariates(&self) -> usize {
        self.structure.n_covariates
    }

    /// Joint posterior of the linear predictors at `locs`. `covariates`
    /// holds one row per location (ignored for intercept-only fits).
    pub fn predict_latent(&self, locs: &Locations, covariates: &[Vec<f64>]) -> Result<Vec<LatentPrediction>> {
        if covariates.len() != locs.len() {
            return Err(Error::Input(format!(
                "{} covariate rows for {} locations",
                covariates.len(),
                locs.len()
            )));
        }
        let j = self.n_covariates();
        if self.structure.covariates {
            if let Some(r) = covariates.iter().position(|c| c.len() != j || c.iter().any(|v| !v.is_finite())) {
                return Err(Error::Input(format!("covariate row {r} must hold {j} finite values")));
            }
        }
        let np = self.n_predictors();
        let mut out = vec![
            LatentPrediction {
                mean: vec![0.0; np],
                cov: vec![0.0; np * np],
            };
            locs.len()
        ];
        for (g, post) in self.state()? {
            let pred = g.predict(&self.structure, &self.hyper, post, locs, covariates);
            for (cell, (m, c)) in pred.into_iter().enumerate() {
                let k = g.predictors.len();
                for a in 0..k {
                    out[cell].mean[g.predictors[a]] = m[a];
                    for b in 0..k {
                        out[cell].cov[g.predictors[a] * np + g.predictors[b]] = c[a * k + b];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Posterior mean and variance of each working row's linear predictor.
    pub fn row_posterior(&self) -> Result<Vec<(f64, f64)>> {
        let mut out = vec![(0.0, 0.0); self.working.rows.len()];
        for (g, post) in self.state()? {
            for (i, &r) in g.rows.iter().enumerate() {
                let noise = 1.0 / self.hyper.tau[g.row_var[i]];
                let mean = g.w[i] - noise * post.alpha[i];
                let var = (noise - noise * noise * post.p_diag[i]).max(0.0);
                out[r] = (mean, var);
            }
        }
        Ok(out)
    }

    /// Fixed effects of predictor `p`: estimates and covariance.
    pub fn fixed_effects(&self, p: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let q1 = self.structure.q_per_predictor();
        for (g, post) in self.state()? {
            if let Some(a) = g.predictors.iter().position(|&x| x == p) {
                let off = a * q1;
                let est = post.beta[off..off + q1].to_vec();
                let cov = (0..q1)
                    .map(|i| (0..q1).map(|j| post.a_inv[(off + i, off + j)]).collect())
                    .collect();
                return Ok((est, cov));
            }
        }
        Err(Error::Input(format!("no predictor with index {p}")))
    }

    /// Point estimates with 95% intervals for every model parameter.
    ///
    /// Fixed effects use their Gaussian posterior; covariance
    /// hyperparameters use the observed information on their optimisation
    /// scale; GPD parameters use their stage-1 fit.
    pub fn parameter_estimates(&self) -> Result<Vec<ParameterEstimate>> {
        let st = &self.structure;
        let mut out = Vec::new();
        for p in 0..self.n_predictors() {
            let (est, cov) = self.fixed_effects(p)?;
            let name = st.predictor_name(p);
            for (i, e) in est.iter().enumerate() {
                let sd = cov[i][i].max(0.0).sqrt();
                let label = if i == 0 {
                    format!("alpha_{name}")
                } else {
                    format!("beta_{name}_{i}")
                };
                out.push(ParameterEstimate {
                    name: label,
                    estimate: *e,
                    sd,
                    lower: e - Z95 * sd,
                    upper: e + Z95 * sd,
                });
            }
        }
        let l = &self.layout;
        let theta_sd = |i: usize| self.theta_covariance[i][i].max(0.0).sqrt();
        let log_scale = |name: String, i: usize, out: &mut Vec<ParameterEstimate>| {
            let t = self.theta[i];
            let sd = theta_sd(i);
            out.push(ParameterEstimate {
                name,
                estimate: t.exp(),
                sd: t.exp() * sd,
                lower: (t - Z95 * sd).exp(),
                upper: (t + Z95 * sd).exp(),
            });
        };
        for v in 0..2 {
            log_scale(format!("tau_{}", v + 1), l.tau_index(v), &mut out);
        }
        for k in 0..l.n_ranges {
            let name = match st.kind {
                ModelKind::Mixture => format!("rho_T{}", k + 1),
                ModelKind::GaussianBaseline => format!("rho_{}", k + 1),
            };
            log_scale(name, l.range_index(k), &mut out);
        }
        for f in 0..l.n_fields {
            log_scale(format!("var_{}", st.field_name(f)), l.variance_index(f), &mut out);
        }
        if st.uses_lambda() {
            match l.lambda_index() {
                Some(i) => {
                    let sd = theta_sd(i);
                    out.push(ParameterEstimate {
                        name: "lambda".into(),
                        estimate: self.theta[i],
                        sd,
                        lower: self.theta[i] - Z95 * sd,
                        upper: self.theta[i] + Z95 * sd,
                    });
                }
                None => out.push(ParameterEstimate {
                    name: "lambda".into(),
                    estimate: l.fixed_lambda,
                    sd: 0.0,
                    lower: l.fixed_lambda,
                    upper: l.fixed_lambda,
                }),
            }
        }
        if let Some(tails) = &self.tails {
            for (v, t) in tails.iter().enumerate() {
                let (lo, hi) = t.scale_interval(Z95);
                out.push(ParameterEstimate {
                    name: format!("sigma_{}", v + 1),
                    estimate: t.params.scale,
                    sd: t.params.scale * t.covariance[0][0].max(0.0).sqrt(),
                    lower: lo,
                    upper: hi,
                });
            }
            for (v, t) in tails.iter().enumerate() {
                let (lo, hi) = t.shape_interval(Z95);
                out.push(ParameterEstimate {
                    name: format!("xi_{}", v + 1),
                    estimate: t.params.shape,
                    sd: t.covariance[1][1].max(0.0).sqrt(),
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(out)
    }

    pub fn estimate(&self, name: &str) -> Option<ParameterEstimate> {
        self.parameter_estimates().ok()?.into_iter().find(|e| e.name == name)
    }

    /// Log-likelihood of row `r` on the original data scale given its
    /// linear predictor, including the membership weight for mixtures.
    fn row_log_likelihood(&self, r: usize, eta: f64) -> f64 {
        let row = &self.working.rows[r];
        let var = row.component.variable();
        let tau = self.hyper.tau[var];
        let sd = 1.0 / tau.sqrt();
        let gauss = std_normal_ln_pdf((row.value - eta) / sd) - sd.ln();
        match (&self.tails, row.component.is_tail()) {
            (None, _) => gauss,
            (Some(_), false) => gauss + self.p[var].ln(),
            (Some(t), true) => {
                // Change of variables from the working scale back to y.
                let jac = gpd_ln_pdf(&t[var].params, row.original).unwrap_or(f64::NEG_INFINITY)
                    - std_normal_ln_pdf(row.value);
                gauss + jac + (1.0 - self.p[var]).ln()
            }
        }
    }

    /// Deviance information criterion on the original data scale from
    /// `samples` posterior draws of the row predictors.
    ///
    /// The deviance is a sum over rows, so its posterior mean only needs the
    /// per-row marginals.
    pub fn dic(&self, samples: usize, seed: u64) -> Result<DicReport> {
        if samples < 2 {
            return Err(Error::Input("DIC needs at least two samples".into()));
        }
        let post = self.row_posterior()?;
        let deviance_at_mean: f64 = post
            .iter()
            .enumerate()
            .map(|(r, (m, _))| -2.0 * self.row_log_likelihood(r, *m))
            .sum();
        let mut rng = seeds::rng(seed, &[stream::DIC]);
        let mut draws = Vec::with_capacity(samples);
        for _ in 0..samples {
            let d: f64 = post
                .iter()
                .enumerate()
                .map(|(r, (m, v))| {
                    let z: f64 = rng.sample(StandardNormal);
                    -2.0 * self.row_log_likelihood(r, m + v.sqrt() * z)
                })
                .sum();
            draws.push(d);
        }
        let s = samples as f64;
        let mean = draws.iter().sum::<f64>() / s;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (s - 1.0);
        Ok(DicReport {
            dic: 2.0 * mean - deviance_at_mean,
            mean_deviance: mean,
            deviance_at_mean,
            effective_parameters: mean - deviance_at_mean,
            mc_se: 2.0 * (var / s).sqrt(),
            samples,
        })
    }

    /// Body/tail labels the mixture was fitted with; `None` for baselines.
    pub fn membership_labels(&self) -> Option<[MembershipLabels; 2]> {
        let tails = self.tails.as_ref()?;
        let n = self.working.locations.len();
        let mut labels = [vec![Membership::Body; n], vec![Membership::Body; n]];
        for r in &self.working.rows {
            if r.component.is_tail() {
                labels[r.component.variable()][r.site] = Membership::Tail;
            }
        }
        let [l1, l2] = labels;
        Some([
            MembershipLabels::from_labels(l1, self.p[0], tails[0].params.threshold),
            MembershipLabels::from_labels(l2, self.p[1], tails[1].params.threshold),
        ])
    }

    /// Components present in this model, in predictor order.
    pub fn components(&self) -> Vec<Component> {
        match self.structure.kind {
            ModelKind::Mixture => Component::ALL.to_vec(),
            ModelKind::GaussianBaseline => vec![Component::B1, Component::B2],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: FittedModel = serde_json::from_str(s)?;
        m.restore()?;
        Ok(m)
    }
}

/// Exact restricted log marginal likelihood of working data at given
/// hyperparameters.
pub fn log_marginal_likelihood(st: &Structure, hyper: &Hyper, working: &WorkingData) -> Result<f64> {
    let layout = Layout::new(st, Some(hyper.lambda));
    let groups = build_groups(st, working)?;
    let mut total = 0.0;
    for g in &groups {
        total += g.evaluate(st, &layout, hyper, None)?.loglik;
    }
    Ok(total)
}

/// The analytic gradient of the objective, exposed for checking.
pub fn log_marginal_gradient(st: &Structure, layout: &Layout, theta: &[f64], working: &WorkingData) -> Result<(f64, Vec<f64>)> {
    let groups = build_groups(st, working)?;
    objective(st, layout, &groups, theta, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coregmix::model::{simulate_dataset, Region};
    use crate::testutil::a1_like;

    fn small_working(n: usize, seed: u64) -> (SpatialDataset, WorkingData) {
        let m = a1_like(0.75, 0.5);
        let d = simulate_dataset(&m, n, Region::square(100.0), seed).unwrap();
        let t = d.truth.as_ref().unwrap();
        let w = build_conditional_likelihood(&d, [&t.labels(0), &t.labels(1)], m.tails).unwrap();
        (d, w)
    }

    fn mixture_structure(j: usize) -> Structure {
        Structure {
            kind: ModelKind::Mixture,
            spatial: true,
            covariates: true,
            smoothness: 1.0,
            n_covariates: j,
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (_, w) = small_working(80, 1);
        let st = mixture_structure(2);
        let layout = Layout::new(&st, None);
        let theta = vec![2.0, 2.5, -0.3, -0.1, 0.2, -0.5, 3.0, 2.0, 0.4];
        let (_, g) = log_marginal_gradient(&st, &layout, &theta, &w).unwrap();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fp = log_marginal_gradient(&st, &layout, &tp, &w).unwrap().0;
            let fm = log_marginal_gradient(&st, &layout, &tm, &w).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn degenerate_posterior_dic_is_deviance_at_mean() {
        let (_, mut f) = crate::testutil::quick_fit(120, 0.5, 3);
        let tau = f.hyper.tau;
        for (g, post) in &mut f.state {
            for (i, p) in post.p_diag.iter_mut().enumerate() {
                *p = tau[g.row_var[i]];
            }
        }
        // Zero up to rounding in `noise - noise^2 p`.
        let worst = f.row_posterior().unwrap().iter().map(|(_, v)| *v).fold(0.0, f64::max);
        assert!(worst < 1e-16, "{worst:e}");
        let d = f.dic(500, 1).unwrap();
        assert!((d.dic - d.deviance_at_mean).abs() <= 1e-9 * d.dic.abs());
        assert!(d.mc_se <= 1e-9 * d.dic.abs());
    }
}
