//! Fixtures shared by unit tests.

use crate::classify::MembershipLabels;
use crate::coregmix::{fit, simulate_dataset, CoregMixModel, FitConfig, FittedModel, Hyper, Region, SpatialDataset};
use crate::distfit::{std_normal_quantile, GpdParams};
use crate::randomfield::MaternField;

/// Scenario-A-like parameters with unit working-scale variance.
pub fn a1_like(p: f64, lambda: f64) -> CoregMixModel {
    let v = 0.9175;
    let field = |r: f64, var: f64| MaternField::new(r, var, 1.0).unwrap();
    let u = 1.0 + std_normal_quantile(p.min(0.999_999));
    CoregMixModel {
        alpha: [1.0, 0.0, 1.0, 0.0],
        beta: [vec![0.1, 0.25], vec![0.1, 0.25], vec![0.1, 0.25], vec![0.1, 0.25]],
        lambda,
        tau: [100.0, 100.0],
        fields: [field(10.0, v), field(10.0, v), field(15.0, v), field(15.0, v * (1.0 - lambda * lambda))],
        tails: [GpdParams::new(u, 1.0, 0.05).unwrap(), GpdParams::new(u, 1.0, 0.25).unwrap()],
        p: [p, p],
    }
}

pub fn true_hyper(m: &CoregMixModel) -> Hyper {
    Hyper {
        ranges: vec![m.fields[0].range, m.fields[2].range],
        variances: m.fields.iter().map(|f| f.variance).collect(),
        tau: m.tau,
        lambda: m.lambda,
    }
}

pub fn true_labels(d: &SpatialDataset) -> [MembershipLabels; 2] {
    let t = d.truth.as_ref().unwrap();
    [t.labels(0), t.labels(1)]
}

/// Mixture fitted at the generating hyperparameters with true labels.
pub fn quick_fit(n: usize, lambda: f64, seed: u64) -> (SpatialDataset, FittedModel) {
    let m = a1_like(0.75, lambda);
    let d = simulate_dataset(&m, n, Region::square(100.0), seed).unwrap();
    let l = true_labels(&d);
    let cfg = FitConfig {
        fixed_hyper: Some(true_hyper(&m)),
        ..FitConfig::default()
    };
    let f = fit(&d, [&l[0], &l[1]], &cfg).unwrap();
    (d, f)
}
