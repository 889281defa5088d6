//! Dense information-form oracle shared by the conditioning tests and the
//! acceptance run.
//!
//! The oracle stacks every fixed effect and every latent field value (at
//! observed and new sites) into one vector, gives the fixed effects a flat
//! prior, and conditions on all working-scale rows at once.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use extremix::coregmix::{fit, simulate_dataset, FitConfig, FittedModel, Hyper, Region};
use extremix::distfit::{std_normal_quantile, GpdParams};
use extremix::evalharness::{scenario_model, ScenarioId};
use extremix::randomfield::{Locations, Point};

pub const TOL: f64 = 1e-8;

pub fn exp_corr(a: Point, b: Point, range: f64) -> f64 {
    (-((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() / range).exp()
}

pub fn small_fit(n: usize, seed: u64) -> FittedModel {
    let mut m = scenario_model(ScenarioId::B1);
    m.p = [0.55, 0.55];
    for t in &mut m.tails {
        *t = GpdParams::new(1.0 + std_normal_quantile(0.55), t.scale, t.shape).unwrap();
    }
    let d = simulate_dataset(&m, n, Region::square(100.0), seed).unwrap();
    let t = d.truth.as_ref().unwrap();
    let labels = [t.labels(0), t.labels(1)];
    let hyper = Hyper {
        ranges: vec![12.0, 20.0],
        variances: vec![0.8, 0.9, 0.7, 0.4],
        tau: [60.0, 90.0],
        lambda: 0.7,
    };
    let cfg = FitConfig {
        smoothness: 0.5,
        fixed_hyper: Some(hyper),
        ..FitConfig::default()
    };
    fit(&d, [&labels[0], &labels[1]], &cfg).unwrap()
}

/// Fields B1, T1, B2, T2; predictor T2 adds lambda times field T1.
pub fn loadings(lambda: f64) -> [Vec<(usize, f64)>; 4] {
    [vec![(0, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)], vec![(1, lambda), (3, 1.0)]]
}

pub struct Oracle {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub q: usize,
    pub n_sites: usize,
}

impl Oracle {
    pub fn build(f: &FittedModel, new_sites: &[Point]) -> Self {
        let h = &f.hyper;
        let data = &f.working;
        let mut sites: Vec<Point> = data.locations.points().to_vec();
        sites.extend_from_slice(new_sites);
        let ns = sites.len();
        let q = 1 + data.n_covariates();
        let nb = 4 * q;
        let dim = nb + 4 * ns;
        let field_range = [h.ranges[0], h.ranges[0], h.ranges[1], h.ranges[1]];
        let load = loadings(h.lambda);

        // Prior precision: flat on the fixed effects, inverse covariance per field.
        let mut prec = DMatrix::<f64>::zeros(dim, dim);
        for fld in 0..4 {
            let c = DMatrix::from_fn(ns, ns, |i, j| h.variances[fld] * exp_corr(sites[i], sites[j], field_range[fld]));
            let ci = c.try_inverse().expect("field covariance invertible");
            prec.view_mut((nb + fld * ns, nb + fld * ns), (ns, ns)).copy_from(&ci);
        }
        let mut rhs = DVector::<f64>::zeros(dim);
        for row in &data.rows {
            let p = row.component.index();
            let var = row.component.variable();
            let mut a = DVector::<f64>::zeros(dim);
            a[p * q] = 1.0;
            for (k, x) in data.covariates[row.site].iter().enumerate() {
                a[p * q + 1 + k] = *x;
            }
            for &(fld, w) in &load[p] {
                a[nb + fld * ns + row.site] = w;
            }
            let tau = h.tau[var];
            prec += &a * a.transpose() * tau;
            rhs += &a * (tau * row.value);
        }
        let cov = prec.try_inverse().expect("posterior precision invertible");
        let mean = &cov * rhs;
        Oracle {
            mean,
            cov,
            q,
            n_sites: ns,
        }
    }

    /// Linear map from the stacked vector to the four predictors at `site`.
    pub fn predictor_map(&self, site: usize, x: &[f64], lambda: f64) -> DMatrix<f64> {
        let (q, ns) = (self.q, self.n_sites);
        let nb = 4 * q;
        let mut l = DMatrix::<f64>::zeros(4, self.mean.len());
        for (p, terms) in loadings(lambda).iter().enumerate() {
            l[(p, p * q)] = 1.0;
            for (k, v) in x.iter().enumerate() {
                l[(p, p * q + 1 + k)] = *v;
            }
            for &(fld, w) in terms {
                l[(p, nb + fld * ns + site)] = w;
            }
        }
        l
    }
}

/// Largest absolute difference between `predict_latent` at `new_sites` and
/// the dense conditional, over means and covariances.
pub fn latent_discrepancy(f: &FittedModel, new_sites: &[Point], new_x: &[Vec<f64>]) -> f64 {
    let oracle = Oracle::build(f, new_sites);
    let locs = Locations::new(new_sites.to_vec()).unwrap();
    let got = f.predict_latent(&locs, new_x).unwrap();
    let n_obs = f.working.locations.len();
    let mut worst: f64 = 0.0;
    for (j, pred) in got.iter().enumerate() {
        let l = oracle.predictor_map(n_obs + j, &new_x[j], f.hyper.lambda);
        let m = &l * &oracle.mean;
        let c = &l * &oracle.cov * l.transpose();
        for a in 0..4 {
            worst = worst.max((pred.mean[a] - m[a]).abs());
            for b in 0..4 {
                worst = worst.max((pred.cov[a * 4 + b] - c[(a, b)]).abs());
            }
        }
    }
    worst
}
