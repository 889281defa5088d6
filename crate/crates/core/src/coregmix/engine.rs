//! Gaussian working-scale model: covariance assembly, restricted likelihood
//! with its analytic gradient, and exact posteriors.
//!
//! Rows are partitioned into groups of predictors that share a latent field.
//! Groups are independent a priori and carry disjoint fixed effects, so the
//! likelihood and the posterior factorise over them.

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::model::Component;
use super::working::WorkingData;
use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};
use crate::randomfield::{Locations, MaternTable, Point};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Separate body and tail predictors per variable; tails share a field.
    Mixture,
    /// One Gaussian predictor per variable on the original scale, with the
    /// same coregionalised sharing between the two variables.
    GaussianBaseline,
}

/// Which latent terms and fixed effects the model contains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub kind: ModelKind,
    pub spatial: bool,
    pub covariates: bool,
    pub smoothness: f64,
    pub n_covariates: usize,
}

impl Structure {
    pub fn n_predictors(&self) -> usize {
        match self.kind {
            ModelKind::Mixture => 4,
            ModelKind::GaussianBaseline => 2,
        }
    }

    pub fn predictor_of(&self, c: Component) -> usize {
        match self.kind {
            ModelKind::Mixture => c.index(),
            ModelKind::GaussianBaseline => c.variable(),
        }
    }

    pub fn predictor_variable(&self, p: usize) -> usize {
        match self.kind {
            ModelKind::Mixture => Component::ALL[p].variable(),
            ModelKind::GaussianBaseline => p,
        }
    }

    pub fn predictor_name(&self, p: usize) -> String {
        match self.kind {
            ModelKind::Mixture => Component::ALL[p].name().to_string(),
            ModelKind::GaussianBaseline => format!("G{}", p + 1),
        }
    }

    pub fn n_ranges(&self) -> usize {
        if self.spatial {
            2
        } else {
            0
        }
    }

    pub fn n_fields(&self) -> usize {
        match (self.spatial, self.kind) {
            (false, _) => 0,
            (true, ModelKind::Mixture) => 4,
            (true, ModelKind::GaussianBaseline) => 2,
        }
    }

    pub fn field_range(&self, f: usize) -> usize {
        match self.kind {
            ModelKind::Mixture => Component::ALL[f].variable(),
            ModelKind::GaussianBaseline => f,
        }
    }

    pub fn field_variable(&self, f: usize) -> usize {
        self.field_range(f)
    }

    /// Latent terms of predictor `p`: `(field, scaled by lambda)`.
    pub fn terms(&self, p: usize) -> Vec<(usize, bool)> {
        if !self.spatial {
            return Vec::new();
        }
        match (self.kind, p) {
            (ModelKind::Mixture, 3) => vec![(1, true), (3, false)],
            (ModelKind::Mixture, p) => vec![(p, false)],
            (ModelKind::GaussianBaseline, 0) => vec![(0, false)],
            (ModelKind::GaussianBaseline, _) => vec![(0, true), (1, false)],
        }
    }

    pub fn uses_lambda(&self) -> bool {
        self.spatial
    }

    /// Fixed effects per predictor: intercept plus optional covariates.
    pub fn q_per_predictor(&self) -> usize {
        1 + if self.covariates { self.n_covariates } else { 0 }
    }

    pub fn field_name(&self, f: usize) -> String {
        match self.kind {
            ModelKind::Mixture => format!("z_{}", Component::ALL[f].name()),
            ModelKind::GaussianBaseline => format!("z_{}", f + 1),
        }
    }

    /// Predictors connected through shared fields.
    pub fn predictor_groups(&self) -> Vec<Vec<usize>> {
        let np = self.n_predictors();
        let mut parent: Vec<usize> = (0..np).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for a in 0..np {
            for b in (a + 1)..np {
                let ta = self.terms(a);
                let tb = self.terms(b);
                if ta.iter().any(|(f, _)| tb.iter().any(|(g, _)| f == g)) {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[rb] = ra;
                }
            }
        }
        let roots: Vec<usize> = (0..np).map(|p| find(&mut parent, p)).collect();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for p in 0..np {
            match groups.iter_mut().find(|g| roots[g[0]] == roots[p]) {
                Some(g) => g.push(p),
                None => groups.push(vec![p]),
            }
        }
        groups
    }
}

/// Covariance hyperparameters on their natural scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub ranges: Vec<f64>,
    pub variances: Vec<f64>,
    /// Noise precisions per variable.
    pub tau: [f64; 2],
    pub lambda: f64,
}

/// Map between [`Hyper`] and the unconstrained-ish vector `theta` of
/// log ranges, log variances, log precisions and (when free) `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_ranges: usize,
    pub n_fields: usize,
    pub lambda_free: bool,
    pub fixed_lambda: f64,
}

impl Layout {
    pub fn new(st: &Structure, fixed_lambda: Option<f64>) -> Self {
        Self {
            n_ranges: st.n_ranges(),
            n_fields: st.n_fields(),
            lambda_free: st.uses_lambda() && fixed_lambda.is_none(),
            fixed_lambda: fixed_lambda.unwrap_or(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_ranges + self.n_fields + 2 + usize::from(self.lambda_free)
    }

    pub fn range_index(&self, k: usize) -> usize {
        k
    }

    pub fn variance_index(&self, f: usize) -> usize {
        self.n_ranges + f
    }

    pub fn tau_index(&self, v: usize) -> usize {
        self.n_ranges + self.n_fields + v
    }

    pub fn lambda_index(&self) -> Option<usize> {
        self.lambda_free.then(|| self.n_ranges + self.n_fields + 2)
    }

    pub fn to_theta(&self, h: &Hyper) -> Vec<f64> {
        let mut t: Vec<f64> = h.ranges.iter().map(|r| r.ln()).collect();
        t.extend(h.variances.iter().map(|v| v.ln()));
        t.push(h.tau[0].ln());
        t.push(h.tau[1].ln());
        if self.lambda_free {
            t.push(h.lambda);
        }
        t
    }

    pub fn from_theta(&self, t: &[f64]) -> Hyper {
        let nr = self.n_ranges;
        let nf = self.n_fields;
        Hyper {
            ranges: t[..nr].iter().map(|v| v.exp()).collect(),
            variances: t[nr..nr + nf].iter().map(|v| v.exp()).collect(),
            tau: [t[nr + nf].exp(), t[nr + nf + 1].exp()],
            lambda: if self.lambda_free { t[nr + nf + 2] } else { self.fixed_lambda },
        }
    }

    pub fn names(&self, st: &Structure) -> Vec<String> {
        let mut n: Vec<String> = (0..self.n_ranges)
            .map(|k| match st.kind {
                ModelKind::Mixture => format!("log_rho_T{}", k + 1),
                ModelKind::GaussianBaseline => format!("log_rho_{}", k + 1),
            })
            .collect();
        n.extend((0..self.n_fields).map(|f| format!("log_var_{}", st.field_name(f))));
        n.push("log_tau_1".into());
        n.push("log_tau_2".into());
        if self.lambda_free {
            n.push("lambda".into());
        }
        n
    }
}

/// Rows of one predictor group with their design and distances.
#[derive(Debug, Clone)]
pub(crate) struct Group {
    pub predictors: Vec<usize>,
    pub rows: Vec<usize>,
    pub row_pred: Vec<usize>,
    pub row_var: Vec<usize>,
    pub sites: Vec<Point>,
    pub w: Vec<f64>,
    pub x: Mat<f64>,
    pub ranges: Vec<usize>,
    pub fields: Vec<usize>,
}

/// Exact posterior pieces of one group at fixed hyperparameters.
#[derive(Debug, Clone)]
pub(crate) struct GroupPosterior {
    pub chol: Cholesky,
    pub kinv_x: Mat<f64>,
    pub a_inv: Mat<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub p_diag: Vec<f64>,
    pub loglik: f64,
}

/// Per-evaluation coefficient tables of a group.
struct Coefs {
    /// `coef[a][f]`: weight of field `f` in local predictor `a`.
    coef: Vec<Vec<f64>>,
    /// Derivative of `coef` with respect to lambda.
    dcoef: Vec<Vec<f64>>,
    /// `pair[k][a][b] = sum over fields f with range k of coef[a][f] coef[b][f] v_f`.
    pair: Vec<Vec<Vec<f64>>>,
}

impl Group {
    pub fn build(st: &Structure, data: &WorkingData, predictors: &[usize]) -> Result<Self> {
        let q1 = st.q_per_predictor();
        let mut rows = Vec::new();
        let mut row_pred = Vec::new();
        // Rows of each predictor in coordinate order, so every sum and
        // factorisation is independent of the input row order.
        let coord = |r: usize| {
            let p = data.locations.get(data.rows[r].site);
            (p.x, p.y)
        };
        for (a, &p) in predictors.iter().enumerate() {
            let mut mine: Vec<usize> = (0..data.rows.len())
                .filter(|&r| st.predictor_of(data.rows[r].component) == p)
                .collect();
            mine.sort_by(|&i, &j| {
                let (a, b) = (coord(i), coord(j));
                a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
            });
            row_pred.extend(std::iter::repeat_n(a, mine.len()));
            rows.extend(mine);
        }
        let n = rows.len();
        let q = q1 * predictors.len();
        let mut x = Mat::<f64>::zeros(n, q);
        for (i, &r) in rows.iter().enumerate() {
            let off = row_pred[i] * q1;
            x[(i, off)] = 1.0;
            if st.covariates {
                for (j, v) in data.covariates[data.rows[r].site].iter().enumerate() {
                    x[(i, off + 1 + j)] = *v;
                }
            }
        }
        let mut fields: Vec<usize> = predictors.iter().flat_map(|&p| st.terms(p)).map(|(f, _)| f).collect();
        fields.sort_unstable();
        fields.dedup();
        let mut ranges: Vec<usize> = fields.iter().map(|&f| st.field_range(f)).collect();
        ranges.sort_unstable();
        ranges.dedup();
        Ok(Self {
            predictors: predictors.to_vec(),
            row_var: rows.iter().map(|&r| data.rows[r].component.variable()).collect(),
            sites: rows.iter().map(|&r| data.locations.get(data.rows[r].site)).collect(),
            w: rows.iter().map(|&r| data.rows[r].value).collect(),
            rows,
            row_pred,
            x,
            ranges,
            fields,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn coefs(&self, st: &Structure, h: &Hyper) -> Coefs {
        let np = self.predictors.len();
        let nf = st.n_fields();
        let mut coef = vec![vec![0.0; nf]; np];
        let mut dcoef = vec![vec![0.0; nf]; np];
        for (a, &p) in self.predictors.iter().enumerate() {
            for (f, scaled) in st.terms(p) {
                coef[a][f] = if scaled { h.lambda } else { 1.0 };
                dcoef[a][f] = if scaled { 1.0 } else { 0.0 };
            }
        }
        let mut pair = vec![vec![vec![0.0; np]; np]; st.n_ranges()];
        for f in 0..nf {
            let k = st.field_range(f);
            for a in 0..np {
                for b in 0..np {
                    pair[k][a][b] += coef[a][f] * coef[b][f] * h.variances[f];
                }
            }
        }
        Coefs { coef, dcoef, pair }
    }

    /// Latent (noise-free) covariance between local predictors `a` and `b`
    /// at distance `d`.
    fn latent_cov(&self, t: &MaternTable, h: &Hyper, c: &Coefs, a: usize, b: usize, d: f64) -> f64 {
        self.ranges
            .iter()
            .map(|&k| {
                let s = c.pair[k][a][b];
                if s == 0.0 {
                    0.0
                } else {
                    s * t.correlation(h.ranges[k], d)
                }
            })
            .sum()
    }

    fn covariance(&self, t: &MaternTable, h: &Hyper, c: &Coefs) -> Mat<f64> {
        let n = self.len();
        let mut k = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let d = self.sites[i].distance(&self.sites[j]);
                let mut v = self.latent_cov(t, h, c, self.row_pred[i], self.row_pred[j], d);
                if i == j {
                    v += 1.0 / h.tau[self.row_var[i]];
                }
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Restricted log-likelihood, optionally with its gradient in `theta`
    /// (accumulated into `grad`), and the posterior pieces.
    pub fn evaluate(
        &self,
        st: &Structure,
        layout: &Layout,
        h: &Hyper,
        grad: Option<&mut [f64]>,
    ) -> Result<GroupPosterior> {
        let n = self.len();
        let q = self.x.ncols();
        if n <= q {
            return Err(Error::insufficient("group rows (beyond fixed effects)", q + 1, n));
        }
        let coefs = self.coefs(st, h);
        let table = MaternTable::shared(st.smoothness);
        let k = self.covariance(&table, h, &coefs);
        let scale = (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;
        let chol = Cholesky::factor_jittered(&k, scale)?;
        let kinv_x = chol.solve(&self.x);
        let a = self.x.transpose() * &kinv_x;
        let a_chol = Cholesky::factor(&a)
            .map_err(|_| Error::Conditioning("fixed-effect design is rank deficient".into()))?;
        let kinv_w = chol.solve_vec(&self.w);
        let xt_kinv_w: Vec<f64> = (0..q).map(|c| (0..n).map(|i| kinv_x[(i, c)] * self.w[i]).sum()).collect();
        let beta = a_chol.solve_vec(&xt_kinv_w);
        let alpha: Vec<f64> = (0..n)
            .map(|i| kinv_w[i] - (0..q).map(|c| kinv_x[(i, c)] * beta[c]).sum::<f64>())
            .collect();
        let quad = dot(&self.w, &alpha);
        let loglik = -0.5 * ((n - q) as f64 * LN_2PI + chol.log_det() + a_chol.log_det() + quad);
        let a_inv = a_chol.inverse();

        let kinv = chol.inverse();
        // P = K^-1 - K^-1 X A^-1 X' K^-1
        let corr = &kinv_x * &a_inv * kinv_x.transpose();
        let p_diag: Vec<f64> = (0..n).map(|i| kinv[(i, i)] - corr[(i, i)]).collect();

        if let Some(g) = grad {
            self.accumulate_gradient(st, &table, layout, h, &coefs, &kinv, &corr, &alpha, g);
        }
        Ok(GroupPosterior {
            chol,
            kinv_x,
            a_inv,
            beta,
            alpha,
            p_diag,
            loglik,
        })
    }

    /// `d loglik / d theta_k = sum_ij M_ij dK_ij/dtheta_k` with
    /// `M = (alpha alpha' - P) / 2`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate_gradient(
        &self,
        st: &Structure,
        table: &MaternTable,
        layout: &Layout,
        h: &Hyper,
        c: &Coefs,
        kinv: &Mat<f64>,
        corr: &Mat<f64>,
        alpha: &[f64],
        g: &mut [f64],
    ) {
        let n = self.len();
        let nr = st.n_ranges();
        let lambda_idx = layout.lambda_index();
        let mut rk = vec![0.0; nr];
        let mut drk = vec![0.0; nr];
        for i in 0..n {
            let a = self.row_pred[i];
            for j in 0..=i {
                let b = self.row_pred[j];
                let p_ij = kinv[(i, j)] - corr[(i, j)];
                let weight = if i == j { 0.5 } else { 1.0 };
                let m = weight * (alpha[i] * alpha[j] - p_ij);
                if i == j {
                    let v = self.row_var[i];
                    g[layout.tau_index(v)] += m * (-1.0 / h.tau[v]);
                }
                if self.ranges.is_empty() {
                    continue;
                }
                let d = self.sites[i].distance(&self.sites[j]);
                for &k in &self.ranges {
                    let (r, dr) = table.correlation_and_dlogrange(h.ranges[k], d);
                    rk[k] = r;
                    drk[k] = dr;
                    g[layout.range_index(k)] += m * c.pair[k][a][b] * dr;
                }
                for &f in &self.fields {
                    let r = rk[st.field_range(f)];
                    let cc = c.coef[a][f] * c.coef[b][f];
                    if cc != 0.0 {
                        g[layout.variance_index(f)] += m * cc * h.variances[f] * r;
                    }
                    if let Some(li) = lambda_idx {
                        let dcc = c.dcoef[a][f] * c.coef[b][f] + c.coef[a][f] * c.dcoef[b][f];
                        if dcc != 0.0 {
                            g[li] += m * dcc * h.variances[f] * r;
                        }
                    }
                }
            }
        }
    }

    /// Joint posterior of this group's latent predictors (fixed effects plus
    /// fields, no observation noise) at each location.
    ///
    /// Returns, per location, the mean for every local predictor and the
    /// covariance across them, row-major.
    pub fn predict(
        &self,
        st: &Structure,
        h: &Hyper,
        post: &GroupPosterior,
        locs: &Locations,
        covariates: &[Vec<f64>],
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let np = self.predictors.len();
        let q1 = st.q_per_predictor();
        let q = self.x.ncols();
        let coefs = self.coefs(st, h);
        let table = MaternTable::shared(st.smoothness);
        let m = locs.len();
        let mut out = Vec::with_capacity(m);
        const CHUNK: usize = 256;
        let mut start = 0;
        while start < m {
            let end = (start + CHUNK).min(m);
            let cells = end - start;
            // Columns ordered (cell, predictor).
            let kmat = Mat::from_fn(n, cells * np, |i, col| {
                let (cell, a) = (col / np, col % np);
                let d = locs.get(start + cell).distance(&self.sites[i]);
                self.latent_cov(&table, h, &coefs, a, self.row_pred[i], d)
            });
            let white = post.chol.whiten(&kmat);
            for cell in 0..cells {
                let s = start + cell;
                let xrow = |a: usize| -> Vec<f64> {
                    let mut v = vec![0.0; q];
                    v[a * q1] = 1.0;
                    if st.covariates {
                        for (j, val) in covariates[s].iter().enumerate() {
                            v[a * q1 + 1 + j] = *val;
                        }
                    }
                    v
                };
                let mut means = vec![0.0; np];
                let mut resid_x: Vec<Vec<f64>> = Vec::with_capacity(np);
                for a in 0..np {
                    let col = cell * np + a;
                    let xa = xrow(a);
                    let kx: f64 = (0..n).map(|i| kmat[(i, col)] * post.alpha[i]).sum();
                    means[a] = dot(&xa, &post.beta) + kx;
                    let r: Vec<f64> = (0..q)
                        .map(|c| xa[c] - (0..n).map(|i| post.kinv_x[(i, c)] * kmat[(i, col)]).sum::<f64>())
                        .collect();
                    resid_x.push(r);
                }
                let mut cov = vec![0.0; np * np];
                for a in 0..np {
                    for b in 0..=a {
                        let prior = self.latent_cov(&table, h, &coefs, a, b, 0.0);
                        let ca = cell * np + a;
                        let cb = cell * np + b;
                        let explained: f64 = (0..n).map(|i| white[(i, ca)] * white[(i, cb)]).sum();
                        let beta_term: f64 = (0..q)
                            .map(|c1| {
                                resid_x[a][c1] * (0..q).map(|c2| post.a_inv[(c1, c2)] * resid_x[b][c2]).sum::<f64>()
                            })
                            .sum();
                        let mut v = prior - explained + beta_term;
                        if a == b {
                            v = v.max(0.0);
                        }
                        cov[a * np + b] = v;
                        cov[b * np + a] = v;
                    }
                }
                out.push((means, cov));
            }
            start = end;
        }
        out
    }
}

pub(crate) fn build_groups(st: &Structure, data: &WorkingData) -> Result<Vec<Group>> {
    st.predictor_groups()
        .iter()
        .map(|preds| Group::build(st, data, preds))
        .collect()
}

/// Restricted log marginal likelihood of the working data, summed over
/// groups, with its gradient in `theta`.
pub(crate) fn objective(
    st: &Structure,
    layout: &Layout,
    groups: &[Group],
    theta: &[f64],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let h = layout.from_theta(theta);
    let mut g = vec![0.0; layout.dim()];
    let mut total = 0.0;
    for grp in groups {
        let post = grp.evaluate(st, layout, &h, if want_grad { Some(&mut g) } else { None })?;
        total += post.loglik;
    }
    Ok((total, g))
}
