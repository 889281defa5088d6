//! Spatial covariance machinery: locations, Matérn covariance, Gaussian
//! random field simulation and exact Gaussian conditioning.

mod bessel;
mod table;

pub use bessel::{bessel_k, bessel_k_scaled_pair};
pub use table::MaternTable;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Points closer than this are treated as the same location.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A non-empty set of distinct planar points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locations {
    points: Vec<Point>,
}

impl Locations {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("a location set needs at least one point".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Input(format!("non-finite coordinate ({}, {})", p.x, p.y)));
        }
        if let Some((i, j)) = find_duplicate(&points) {
            return Err(Error::Input(format!(
                "points {i} and {j} coincide within {DUPLICATE_TOLERANCE:e}"
            )));
        }
        Ok(Self { points })
    }

    /// Skips the duplicate check; for grids and prediction sets built
    /// internally, where points are distinct by construction.
    pub(crate) fn new_unchecked(points: Vec<Point>) -> Self {
        Self { points }
    }

    /// Regular `nx` by `ny` grid of cell centres over a rectangle, row-major
    /// with `x` varying fastest.
    pub fn grid(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
            return Err(Error::Input(format!(
                "bad grid [{x0}, {x1}] x [{y0}, {y1}] with {nx} x {ny} cells"
            )));
        }
        let dx = (x1 - x0) / nx as f64;
        let dy = (y1 - y0) / ny as f64;
        let mut points = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                points.push(Point::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn get(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn subset(&self, idx: &[usize]) -> Locations {
        Locations::new_unchecked(idx.iter().map(|&i| self.points[i]).collect())
    }

    /// Largest pairwise distance (bounding-box diagonal, as an upper bound
    /// that is cheap to compute).
    pub fn extent(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        (x1 - x0).hypot(y1 - y0)
    }
}

/// First pair of points (in original order) closer than the tolerance.
pub fn find_duplicate(points: &[Point]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    let mut best: Option<(usize, usize)> = None;
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if points[j].x - points[i].x > DUPLICATE_TOLERANCE {
                break;
            }
            if points[i].distance(&points[j]) <= DUPLICATE_TOLERANCE {
                let pair = (i.min(j), i.max(j));
                if best.is_none_or(|b| pair < b) {
                    best = Some(pair);
                }
            }
        }
    }
    best
}

/// Euclidean distances between every point of `a` and every point of `b`.
pub fn pairwise_distances(a: &Locations, b: &Locations) -> Mat<f64> {
    Mat::from_fn(a.len(), b.len(), |i, j| a.points[i].distance(&b.points[j]))
}

/// Matérn covariance `sigma^2 2^(1-nu)/Gamma(nu) (sqrt(2 nu) d/rho)^nu K_nu(sqrt(2 nu) d/rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternField {
    pub range: f64,
    pub variance: f64,
    pub smoothness: f64,
}

impl MaternField {
    pub fn new(range: f64, variance: f64, smoothness: f64) -> Result<Self> {
        for (name, v) in [("range", range), ("variance", variance), ("smoothness", smoothness)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("Matérn {name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            range,
            variance,
            smoothness,
        })
    }

    pub fn correlation(&self, d: f64) -> f64 {
        matern_correlation(self.smoothness, self.range, d)
    }

    pub fn covariance(&self, d: f64) -> f64 {
        self.variance * self.correlation(d)
    }

    /// Covariance matrix between two location sets.
    pub fn cross_covariance(&self, a: &Locations, b: &Locations) -> Mat<f64> {
        Mat::from_fn(a.len(), b.len(), |i, j| self.covariance(a.points[i].distance(&b.points[j])))
    }

    pub fn covariance_matrix(&self, locs: &Locations) -> Mat<f64> {
        correlation_matrix(self.smoothness, self.range, locs) * faer::Scale(self.variance)
    }
}

pub fn matern_cov(field: &MaternField, d: f64) -> f64 {
    field.covariance(d)
}

fn matern_constant(nu: f64) -> f64 {
    if nu == 1.0 {
        1.0
    } else if nu == 0.5 {
        (2.0 / std::f64::consts::PI).sqrt()
    } else {
        (2.0f64).powf(1.0 - nu) / libm::tgamma(nu)
    }
}

/// Unit-variance Matérn correlation at distance `d`.
pub fn matern_correlation(nu: f64, range: f64, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let x = (2.0 * nu).sqrt() * d / range;
    if x > 745.0 + nu * x.ln() {
        return 0.0;
    }
    let (k_scaled, _) = bessel_k_scaled_pair(nu, x);
    let r = matern_constant(nu) * (nu * x.ln() - x).exp() * k_scaled;
    r.min(1.0)
}

/// Correlation and its derivative with respect to `ln(range)`:
/// `d/d ln rho [x^nu K_nu(x)] = x^(nu+1) K_{nu-1}(x)`.
pub fn matern_correlation_and_dlogrange(nu: f64, range: f64, d: f64) -> (f64, f64) {
    if d <= 0.0 {
        return (1.0, 0.0);
    }
    let x = (2.0 * nu).sqrt() * d / range;
    if x > 745.0 + nu * x.ln() {
        return (0.0, 0.0);
    }
    let (k_nu, k_lower) = bessel_k_scaled_pair(nu, x);
    let c = matern_constant(nu);
    let base = (nu * x.ln() - x).exp();
    ((c * base * k_nu).min(1.0), c * base * x * k_lower)
}

pub fn correlation_matrix(nu: f64, range: f64, locs: &Locations) -> Mat<f64> {
    let n = locs.len();
    let mut m = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in 0..i {
            let r = matern_correlation(nu, range, locs.points[i].distance(&locs.points[j]));
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// One draw from the zero-mean field at `locs`.
pub fn simulate_grf<R: Rng + ?Sized>(field: &MaternField, locs: &Locations, rng: &mut R) -> Result<Vec<f64>> {
    let chol = Cholesky::factor_jittered(&field.covariance_matrix(locs), field.variance)?;
    Ok(draw_from_factor(&chol, rng))
}

/// `L z` for fresh iid standard normals `z`.
pub fn draw_from_factor<R: Rng + ?Sized>(chol: &Cholesky, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..chol.dim()).map(|_| rng.sample(StandardNormal)).collect();
    chol.colour(&z)
}

/// Gaussian conditional of the prediction block given noisy observations.
///
/// `joint` is the covariance of `(obs, pred)` with the observed block first;
/// `prior_mean` is laid out the same way. Observations carry independent
/// noise of standard deviation `noise_sd`.
pub fn conditional_gaussian(
    prior_mean: &[f64],
    joint: &Mat<f64>,
    observed: &[f64],
    noise_sd: f64,
) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = observed.len();
    let total = joint.nrows();
    if joint.ncols() != total || prior_mean.len() != total || n > total {
        return Err(Error::Input(format!(
            "conditional_gaussian: covariance {}x{}, mean {}, observations {n}",
            joint.nrows(),
            joint.ncols(),
            prior_mean.len()
        )));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::Domain(format!("noise sd must be non-negative, got {noise_sd}")));
    }
    let m = total - n;
    let mut k_oo = joint.submatrix(0, 0, n, n).to_owned();
    for i in 0..n {
        k_oo[(i, i)] += noise_sd * noise_sd;
    }
    let k_op = joint.submatrix(0, n, n, m).to_owned();
    let k_pp = joint.submatrix(n, n, m, m).to_owned();
    let chol = Cholesky::factor(&k_oo)
        .map_err(|_| Error::Conditioning("observation covariance is singular".into()))?;
    let resid: Vec<f64> = (0..n).map(|i| observed[i] - prior_mean[i]).collect();
    let alpha = chol.solve_vec(&resid);
    let mean: Vec<f64> = (0..m)
        .map(|j| prior_mean[n + j] + (0..n).map(|i| k_op[(i, j)] * alpha[i]).sum::<f64>())
        .collect();
    let w = chol.whiten(&k_op);
    let mut cov = k_pp - w.transpose() * &w;
    for j in 0..m {
        cov[(j, j)] = cov[(j, j)].max(0.0);
    }
    Ok((mean, cov))
}
