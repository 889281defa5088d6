//! Tabulated Matérn correlation for the inner loops of likelihood
//! evaluation, where a Bessel function per pair would dominate the cost.
//!
//! With `f(x) = c x^nu K_nu(x)` the correlation at scaled distance `x`, the
//! Bessel equation gives `x f'' + (1 - 2 nu) f' - x f = 0`, so exact `f`,
//! `f'` and `f''` are known at every node and both `f` and `f'` are
//! interpolated by cubic Hermite polynomials. Near zero, where `f''` has a
//! logarithmic singularity, the exact functions are used instead.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::{matern_correlation, matern_correlation_and_dlogrange};

const STEP: f64 = 1.0 / 1024.0;
const X_DIRECT: f64 = 1.0 / 16.0;
const X_MAX: f64 = 48.0;

#[derive(Debug)]
pub struct MaternTable {
    nu: f64,
    scale: f64,
    f: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl MaternTable {
    pub fn new(nu: f64) -> Self {
        let n = (X_MAX / STEP) as usize + 2;
        let mut f = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        let scale = (2.0 * nu).sqrt();
        for i in 0..n {
            let x = (i as f64 * STEP).max(X_DIRECT * 0.5);
            // Unit range so that x is the distance divided by `scale`.
            let (v, dlog) = matern_correlation_and_dlogrange(nu, scale, x);
            let fp = -dlog / x;
            f.push(v);
            d1.push(fp);
            d2.push(v - (1.0 - 2.0 * nu) * fp / x);
        }
        Self { nu, scale, f, d1, d2 }
    }

    /// Process-wide table for smoothness `nu`, built on first use.
    pub fn shared(nu: f64) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<MaternTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard.entry(nu.to_bits()).or_insert_with(|| Arc::new(Self::new(nu))).clone()
    }

    pub fn smoothness(&self) -> f64 {
        self.nu
    }

    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let t = x / STEP;
        let i = t as usize;
        (i, t - i as f64)
    }

    #[inline]
    fn hermite(p0: f64, p1: f64, m0: f64, m1: f64, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * STEP * m0 + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * STEP * m1
    }

    /// Correlation at distance `d` for range `range`.
    #[inline]
    pub fn correlation(&self, range: f64, d: f64) -> f64 {
        let x = self.scale * d / range;
        if x < X_DIRECT {
            return matern_correlation(self.nu, range, d);
        }
        if x >= X_MAX {
            return 0.0;
        }
        let (i, t) = self.locate(x);
        Self::hermite(self.f[i], self.f[i + 1], self.d1[i], self.d1[i + 1], t)
    }

    /// Correlation and its derivative with respect to `ln(range)`.
    #[inline]
    pub fn correlation_and_dlogrange(&self, range: f64, d: f64) -> (f64, f64) {
        let x = self.scale * d / range;
        if x < X_DIRECT {
            return matern_correlation_and_dlogrange(self.nu, range, d);
        }
        if x >= X_MAX {
            return (0.0, 0.0);
        }
        let (i, t) = self.locate(x);
        let f = Self::hermite(self.f[i], self.f[i + 1], self.d1[i], self.d1[i + 1], t);
        let fp = Self::hermite(self.d1[i], self.d1[i + 1], self.d2[i], self.d2[i + 1], t);
        (f, -x * fp)
    }
}
