//! Posterior-predictive sampling on prediction grids and Monte Carlo
//! exceedance maps.
//!
//! Every per-cell quantity depends only on the joint predictive of the two
//! responses at that cell, so sampling is done cell by cell from the exact
//! posterior of the linear predictors at the fitted hyperparameters. Each
//! (cell, repetition) pair owns a seed derived from the master seed, which
//! makes results independent of evaluation order and thread count.

mod map;

pub use map::{exceedance_map, RiskCell, RiskMap, RiskMode};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{empirical_quantile, fit_membership_field, Membership, MembershipFieldConfig};
use crate::coregmix::{Component, FittedModel, ModelKind};
use crate::distfit::normal::std_normal_sf;
use crate::distfit::{gaussian_to_tail, tail_to_gaussian, GpdParams};
use crate::error::{Error, Result};
use crate::randomfield::{Locations, Point};
use crate::seeds::{self, stream};

/// Locations to predict at, with their covariates and tail probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub locations: Locations,
    /// One row per location.
    pub covariates: Vec<Vec<f64>>,
    /// Probability of tail membership per variable and location.
    pub p_tail: [Vec<f64>; 2],
    /// `(nx, ny)` when the locations form a regular raster, x fastest.
    pub shape: Option<(usize, usize)>,
}

impl PredictionGrid {
    pub fn new(locations: Locations, covariates: Vec<Vec<f64>>, p_tail: [Vec<f64>; 2]) -> Result<Self> {
        let n = locations.len();
        if covariates.len() != n || p_tail.iter().any(|p| p.len() != n) {
            return Err(Error::Input(format!(
                "grid has {n} locations but {} covariate rows and {} / {} tail probabilities",
                covariates.len(),
                p_tail[0].len(),
                p_tail[1].len()
            )));
        }
        if let Some(i) = covariates.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Input(format!("grid covariates at cell {i} are not finite")));
        }
        if let Some(p) = p_tail.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("tail probability {p} outside [0, 1]")));
        }
        Ok(Self {
            locations,
            covariates,
            p_tail,
            shape: None,
        })
    }

    /// Cell-centred raster over a rectangle.
    #[allow(clippy::too_many_arguments)]
    pub fn regular(
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        nx: usize,
        ny: usize,
        covariates: Vec<Vec<f64>>,
        p_tail: [Vec<f64>; 2],
    ) -> Result<Self> {
        let mut g = Self::new(Locations::grid(x0, x1, y0, y1, nx, ny)?, covariates, p_tail)?;
        g.shape = Some((nx, ny));
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn point(&self, cell: usize) -> Point {
        self.locations.get(cell)
    }
}

/// Joint predictive of the two working-scale responses at one cell.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellPredictive {
    /// `mean[v][k]`: variable `v`, body (`k = 0`) or tail (`k = 1`).
    mean: [[f64; 2]; 2],
    /// Cholesky factor `(l11, l21, l22)` of the 2x2 predictive covariance
    /// for each component pair, indexed `2 * k1 + k2`.
    chol: [[f64; 3]; 4],
    p_tail: [f64; 2],
}

impl CellPredictive {
    pub fn sd(&self, var: usize, k: usize) -> f64 {
        if var == 0 {
            self.chol[2 * k][0]
        } else {
            let c = self.chol[k];
            (c[1] * c[1] + c[2] * c[2]).sqrt()
        }
    }

    pub fn mean(&self, var: usize, k: usize) -> f64 {
        self.mean[var][k]
    }

    pub fn p_tail(&self, var: usize) -> f64 {
        self.p_tail[var]
    }

    /// One draw: working-scale values and whether each came from the tail.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ([f64; 2], [bool; 2]) {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let t = [u1 < self.p_tail[0], u2 < self.p_tail[1]];
        let k = [usize::from(t[0]), usize::from(t[1])];
        let c = self.chol[2 * k[0] + k[1]];
        let w1 = self.mean[0][k[0]] + c[0] * z1;
        let w2 = self.mean[1][k[1]] + c[1] * z1 + c[2] * z2;
        ([w1, w2], t)
    }
}

fn chol2(a: f64, b: f64, c: f64) -> [f64; 3] {
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    [l11, l21, l22]
}

/// Per-cell predictives for a grid. Gaussian baselines have no tail.
pub(crate) fn cell_predictives(fitted: &FittedModel, grid: &PredictionGrid) -> Result<Vec<CellPredictive>> {
    let j = fitted.n_covariates();
    if fitted.structure.covariates && grid.covariates.iter().any(|r| r.len() != j) {
        return Err(Error::Input(format!(
            "grid covariates must have {j} columns to match the fitted model"
        )));
    }
    let latent = fitted.predict_latent(&grid.locations, &grid.covariates)?;
    let st = &fitted.structure;
    let np = st.n_predictors();
    let mixture = st.kind == ModelKind::Mixture;
    let noise = [1.0 / fitted.hyper.tau[0], 1.0 / fitted.hyper.tau[1]];
    let pred = |var: usize, k: usize| {
        let m = if k == 1 { Membership::Tail } else { Membership::Body };
        st.predictor_of(Component::of(var, m))
    };
    Ok(latent
        .iter()
        .enumerate()
        .map(|(cell, lp)| {
            let mut mean = [[0.0; 2]; 2];
            let mut chol = [[0.0; 3]; 4];
            for (v, row) in mean.iter_mut().enumerate() {
                for (k, m) in row.iter_mut().enumerate() {
                    *m = lp.mean[pred(v, k)];
                }
            }
            for k1 in 0..2 {
                for k2 in 0..2 {
                    let (a, b) = (pred(0, k1), pred(1, k2));
                    chol[2 * k1 + k2] = chol2(
                        lp.cov[a * np + a] + noise[0],
                        lp.cov[a * np + b],
                        lp.cov[b * np + b] + noise[1],
                    );
                }
            }
            let p_tail = if mixture {
                [grid.p_tail[0][cell], grid.p_tail[1][cell]]
            } else {
                [0.0, 0.0]
            };
            CellPredictive { mean, chol, p_tail }
        })
        .collect())
}

/// Tail distributions of a fitted model, if it has any.
fn tails(fitted: &FittedModel) -> Option<[GpdParams; 2]> {
    fitted.tails.as_ref().map(|t| [t[0].params, t[1].params])
}

/// Tail probabilities at `locations` from a membership surface fitted to
/// the model's own labels. Baselines have no tail.
pub fn tail_probabilities(
    fitted: &FittedModel,
    locations: &Locations,
    config: &MembershipFieldConfig,
) -> Result<[Vec<f64>; 2]> {
    let Some(labels) = fitted.membership_labels() else {
        return Ok([vec![0.0; locations.len()], vec![0.0; locations.len()]]);
    };
    let mut out: [Vec<f64>; 2] = Default::default();
    for (v, l) in labels.iter().enumerate() {
        out[v] = fit_membership_field(&fitted.working.locations, l, config)?.predict(locations)?;
    }
    Ok(out)
}

/// Data-scale predictive median of each component, per cell:
/// `out[cell][v] = [body, tail]`. The back-transform is monotone, so the
/// tail median is the transformed working-scale mean. Baselines repeat the
/// body value.
pub fn component_medians(fitted: &FittedModel, grid: &PredictionGrid) -> Result<Vec<[[f64; 2]; 2]>> {
    let cells = cell_predictives(fitted, grid)?;
    let tails = tails(fitted);
    Ok(cells
        .iter()
        .map(|cp| {
            [0, 1].map(|v| {
                let body = cp.mean(v, 0);
                let tail = tails.as_ref().map_or(body, |g| gaussian_to_tail(&g[v], cp.mean(v, 1)));
                [body, tail]
            })
        })
        .collect())
}

/// Predictive samples on the original data scale, `m` per cell, stored
/// sample-major: `y[v][s * cells + cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSamples {
    pub m: usize,
    pub cells: usize,
    pub y: [Vec<f64>; 2],
}

impl PredictiveSamples {
    pub fn get(&self, var: usize, sample: usize, cell: usize) -> f64 {
        self.y[var][sample * self.cells + cell]
    }

    pub fn cell(&self, var: usize, cell: usize) -> Vec<f64> {
        (0..self.m).map(|s| self.get(var, s, cell)).collect()
    }
}

/// Draw `m` predictive samples per grid cell: body or tail chosen with the
/// cell's tail probability, tail draws back-transformed through the GPD.
pub fn sample_predictive(fitted: &FittedModel, grid: &PredictionGrid, m: usize, seed: u64) -> Result<PredictiveSamples> {
    if m == 0 {
        return Err(Error::Input("need at least one sample per cell".into()));
    }
    let cells = cell_predictives(fitted, grid)?;
    let tails = tails(fitted);
    let per_cell: Vec<[Vec<f64>; 2]> = cells
        .par_iter()
        .enumerate()
        .map(|(cell, cp)| {
            let mut rng = seeds::rng(seed, &[stream::PREDICT, cell as u64]);
            let mut out = [Vec::with_capacity(m), Vec::with_capacity(m)];
            for _ in 0..m {
                let (w, t) = cp.draw(&mut rng);
                for v in 0..2 {
                    let y = match (&tails, t[v]) {
                        (Some(g), true) => gaussian_to_tail(&g[v], w[v]),
                        _ => w[v],
                    };
                    out[v].push(y);
                }
            }
            out
        })
        .collect();
    let n = cells.len();
    let mut y = [vec![0.0; m * n], vec![0.0; m * n]];
    for (cell, vals) in per_cell.iter().enumerate() {
        for v in 0..2 {
            for (s, val) in vals[v].iter().enumerate() {
                y[v][s * n + cell] = *val;
            }
        }
    }
    Ok(PredictiveSamples { m, cells: n, y })
}

/// One row of the prediction table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub x: f64,
    pub y: f64,
    /// 1 or 2.
    pub var: usize,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub p_tail: f64,
}

/// Monte Carlo summaries of the predictive distribution per cell and
/// variable, ordered cell-major.
pub fn predictive_summary(fitted: &FittedModel, grid: &PredictionGrid, m: usize, seed: u64) -> Result<Vec<PredictionSummary>> {
    if m < 2 {
        return Err(Error::Input("predictive summaries need at least two samples".into()));
    }
    let samples = sample_predictive(fitted, grid, m, seed)?;
    let mixture = fitted.structure.kind == ModelKind::Mixture;
    let mut out = Vec::with_capacity(2 * grid.len());
    for cell in 0..grid.len() {
        let p = grid.point(cell);
        for v in 0..2 {
            let vals = samples.cell(v, cell);
            let mean = vals.iter().sum::<f64>() / m as f64;
            let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
            out.push(PredictionSummary {
                x: p.x,
                y: p.y,
                var: v + 1,
                mean,
                median: empirical_quantile(&vals, 0.5)?,
                sd,
                q025: empirical_quantile(&vals, 0.025)?,
                q975: empirical_quantile(&vals, 0.975)?,
                p_tail: if mixture { grid.p_tail[v][cell] } else { 0.0 },
            });
        }
    }
    Ok(out)
}

/// Working-scale value above which a tail draw exceeds `t` on the data
/// scale.
pub(crate) fn tail_cut(params: &GpdParams, t: f64) -> f64 {
    if t < params.threshold {
        return f64::NEG_INFINITY;
    }
    tail_to_gaussian(params, t).unwrap_or(f64::INFINITY)
}

/// Exact marginal probability that each variable exceeds its threshold,
/// per cell.
pub fn marginal_exceedance(fitted: &FittedModel, grid: &PredictionGrid, thresholds: [f64; 2]) -> Result<[Vec<f64>; 2]> {
    let cells = cell_predictives(fitted, grid)?;
    let tails = tails(fitted);
    let mut out = [Vec::with_capacity(cells.len()), Vec::with_capacity(cells.len())];
    for cp in &cells {
        for v in 0..2 {
            let above = |mean: f64, sd: f64, cut: f64| -> f64 {
                if cut == f64::NEG_INFINITY {
                    1.0
                } else if cut == f64::INFINITY {
                    0.0
                } else if sd > 0.0 {
                    std_normal_sf((cut - mean) / sd)
                } else {
                    f64::from(u8::from(mean > cut))
                }
            };
            let body = above(cp.mean(v, 0), cp.sd(v, 0), thresholds[v]);
            let tail = match &tails {
                Some(g) => above(cp.mean(v, 1), cp.sd(v, 1), tail_cut(&g[v], thresholds[v])),
                None => 0.0,
            };
            let pt = cp.p_tail(v);
            out[v].push((1.0 - pt) * body + pt * tail);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::quick_fit;

    fn grid(p_tail: f64) -> PredictionGrid {
        let n = 9;
        PredictionGrid::regular(0.0, 100.0, 0.0, 100.0, 3, 3, vec![vec![0.0, 0.0]; n], [vec![p_tail; n], vec![p_tail; n]])
            .unwrap()
    }

    #[test]
    fn grid_validation() {
        let locs = Locations::grid(0.0, 1.0, 0.0, 1.0, 2, 1).unwrap();
        assert!(PredictionGrid::new(locs.clone(), vec![vec![]; 2], [vec![0.5; 2], vec![1.5; 2]]).is_err());
        assert!(PredictionGrid::new(locs.clone(), vec![vec![]; 1], [vec![0.5; 2], vec![0.5; 2]]).is_err());
        assert!(PredictionGrid::new(locs, vec![vec![f64::NAN]; 2], [vec![0.5; 2], vec![0.5; 2]]).is_err());
    }

    #[test]
    fn body_only_samples_centre_on_latent_mean() {
        let (_, f) = quick_fit(120, 0.25, 3);
        let g = grid(0.0);
        let m = 4000;
        let s = sample_predictive(&f, &g, m, 1).unwrap();
        let latent = f.predict_latent(&g.locations, &g.covariates).unwrap();
        for cell in 0..g.len() {
            for (v, pred) in [(0, 0), (1, 2)] {
                let vals = s.cell(v, cell);
                let mean = vals.iter().sum::<f64>() / m as f64;
                let sd = (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
                let target = latent[cell].mean[pred];
                assert!((mean - target).abs() < 3.5 * sd / (m as f64).sqrt(), "{cell} {v}: {mean} vs {target}");
            }
        }
    }

    #[test]
    fn tail_only_samples_respect_the_support() {
        let (_, f) = quick_fit(120, 0.25, 3);
        let s = sample_predictive(&f, &grid(1.0), 500, 2).unwrap();
        let tails = f.tails.as_ref().unwrap();
        for v in 0..2 {
            assert!(s.y[v].iter().all(|y| *y >= tails[v].params.threshold));
        }
    }

    #[test]
    fn low_thresholds_give_certainty() {
        let (_, f) = quick_fit(120, 0.25, 3);
        let map = exceedance_map(&f, &grid(0.3), [-1e6, -1e6], 5, 50, RiskMode::Joint, 4).unwrap();
        for c in &map.cells {
            assert_eq!((c.p, c.ci_lo, c.ci_hi), (Some(1.0), Some(1.0), Some(1.0)));
        }
    }

    #[test]
    fn maps_are_monotone_and_bounded_by_marginals() {
        let (_, f) = quick_fit(120, 0.9, 5);
        let g = grid(0.25);
        let lo = exceedance_map(&f, &g, [1.5, 1.5], 20, 200, RiskMode::Joint, 9).unwrap();
        let hi = exceedance_map(&f, &g, [2.5, 1.5], 20, 200, RiskMode::Joint, 9).unwrap();
        let marg = marginal_exceedance(&f, &g, [1.5, 1.5]).unwrap();
        for (cell, (a, b)) in lo.cells.iter().zip(&hi.cells).enumerate() {
            assert!(b.p.unwrap() <= a.p.unwrap());
            let se = a.sd.unwrap() / (20f64).sqrt();
            assert!(a.p.unwrap() <= marg[0][cell].min(marg[1][cell]) + 4.0 * se + 1e-12);
            assert!(a.ci_lo.unwrap() <= a.p.unwrap() && a.p.unwrap() <= a.ci_hi.unwrap());
        }
    }

    #[test]
    fn conditional_mode_marks_impossible_events() {
        let (_, f) = quick_fit(120, 0.25, 3);
        let map = exceedance_map(&f, &grid(0.2), [0.0, 1e9], 3, 20, RiskMode::Conditional, 4).unwrap();
        assert!(map.cells.iter().all(|c| c.p.is_none() && c.defined == 0));
    }

    #[test]
    fn maps_are_deterministic() {
        let (_, f) = quick_fit(100, 0.25, 8);
        let g = grid(0.2);
        let a = exceedance_map(&f, &g, [1.0, 1.2], 4, 30, RiskMode::Joint, 77).unwrap();
        let b = exceedance_map(&f, &g, [1.0, 1.2], 4, 30, RiskMode::Joint, 77).unwrap();
        assert_eq!(a, b);
        assert!(exceedance_map(&f, &g, [1.0, 1.2], 1, 30, RiskMode::Joint, 77).is_err());
    }
}
