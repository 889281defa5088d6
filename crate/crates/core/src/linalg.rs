//! Thin dense linear-algebra layer over `faer`, always run sequentially so
//! results do not depend on the thread count.

use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{MatRef, Par, Side};

/// Dense matrix type used throughout the public API.
pub use faer::Mat;

use crate::error::{Error, Result};

/// Relative nugget levels tried, in order, before a matrix is declared
/// numerically singular.
pub const JITTER_SCHEDULE: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower Cholesky factor `A + jitter I = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat<f64>,
    jitter: f64,
}

impl Cholesky {
    pub fn factor(a: &Mat<f64>) -> Result<Self> {
        match a.llt(Side::Lower) {
            Ok(llt) => Ok(Self {
                l: llt.L().to_owned(),
                jitter: 0.0,
            }),
            Err(e) => Err(Error::Conditioning(format!("Cholesky failed: {e:?}"))),
        }
    }

    /// Factor with the nugget schedule; `scale` sets the absolute size of
    /// the jitter (typically the marginal variance).
    pub fn factor_jittered(a: &Mat<f64>, scale: f64) -> Result<Self> {
        let n = a.nrows();
        for &rel in &JITTER_SCHEDULE {
            let jitter = rel * scale;
            let attempt = if jitter == 0.0 {
                a.llt(Side::Lower)
            } else {
                let mut b = a.clone();
                for i in 0..n {
                    b[(i, i)] += jitter;
                }
                b.llt(Side::Lower)
            };
            if let Ok(llt) = attempt {
                let l = llt.L().to_owned();
                if (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
                    return Ok(Self { l, jitter });
                }
            }
        }
        Err(Error::Conditioning(format!(
            "{n}x{n} covariance not positive definite after jitter {:e}",
            JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1] * scale
        )))
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.l.as_ref()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut Mat<f64>) {
        solve_lower_triangular_in_place(self.l.as_ref(), b.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.l.transpose(), b.as_mut(), Par::Seq);
    }

    pub fn solve(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_in_place(&mut x);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// `L^{-1} b` (whitening).
    pub fn whiten(&self, b: &Mat<f64>) -> Mat<f64> {
        let mut x = b.clone();
        solve_lower_triangular_in_place(self.l.as_ref(), x.as_mut(), Par::Seq);
        x
    }

    /// `L z`, mapping iid standard normals to `N(0, A)`.
    pub fn colour(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[(i, k)] * z[k]).sum())
            .collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        let n = self.dim();
        let mut x = Mat::<f64>::identity(n, n);
        self.solve_in_place(&mut x);
        // Symmetrise away rounding asymmetry.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (x[(i, j)] + x[(j, i)]);
                x[(i, j)] = v;
                x[(j, i)] = v;
            }
        }
        x
    }
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eigen(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Conditioning(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let vals = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
