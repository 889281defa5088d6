use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use extremix::distfit::{
    gaussian_to_tail, gpd_cdf, gpd_log_likelihood, gpd_mle, gpd_quantile, kurtosis, std_normal_cdf,
    tail_to_gaussian, GpdParams,
};
use extremix::io::load_observations;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn gpd_sample(params: &GpdParams, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| gpd_quantile(params, rng.random::<f64>()).unwrap()).collect()
}

fn shape() -> impl Strategy<Value = f64> {
    prop_oneof![-0.45..0.9f64, -1e-6..1e-6f64, Just(0.0)]
}

proptest! {
    #[test]
    fn cdf_is_monotone(u in -5.0..5.0f64, s in 0.05..5.0f64, x in shape(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let p = GpdParams::new(u, s, x).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        // Points spread across the support via the quantile function.
        let ylo = gpd_quantile(&p, lo * 0.999).unwrap();
        let yhi = gpd_quantile(&p, hi * 0.999).unwrap();
        prop_assert!(gpd_cdf(&p, ylo).unwrap() <= gpd_cdf(&p, yhi).unwrap());
    }

    #[test]
    fn quantile_inverts_cdf_on_support(u in -5.0..5.0f64, s in 0.05..5.0f64, x in shape(), t in 0.0..12.0f64) {
        let p = GpdParams::new(u, s, x).unwrap();
        let mut y = u + t;
        if x < 0.0 {
            y = u + (p.upper_endpoint() - u) * t / 12.5;
        }
        let q = gpd_cdf(&p, y).unwrap();
        prop_assume!(q < 1.0 - 1e-9);
        let back = gpd_quantile(&p, q).unwrap();
        prop_assert!((back - y).abs() <= 1e-9 * y.abs().max(1.0), "y={} back={}", y, back);
    }

    #[test]
    fn cdf_inverts_quantile(u in -5.0..5.0f64, s in 0.05..5.0f64, x in shape(), q in 0.0..0.999_999f64) {
        let p = GpdParams::new(u, s, x).unwrap();
        let y = gpd_quantile(&p, q).unwrap();
        prop_assert!((gpd_cdf(&p, y).unwrap() - q).abs() < 1e-10);
    }

    #[test]
    fn transform_round_trip(s in 0.05..5.0f64, x in shape(), q in 0.0..0.999_999f64) {
        let p = GpdParams::new(1.5, s, x).unwrap();
        let y = gpd_quantile(&p, q).unwrap();
        prop_assume!(y > 1.5);
        let w = tail_to_gaussian(&p, y).unwrap();
        prop_assert!((gaussian_to_tail(&p, w) - y).abs() < 1e-9 * y.abs().max(1.0));
    }

    #[test]
    fn transform_is_increasing(s in 0.05..5.0f64, x in shape(), a in 1e-6..0.999f64, b in 1e-6..0.999f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let p = GpdParams::new(0.0, s, x).unwrap();
        let (ya, yb) = (gpd_quantile(&p, a).unwrap(), gpd_quantile(&p, b).unwrap());
        let (wa, wb) = (tail_to_gaussian(&p, ya).unwrap(), tail_to_gaussian(&p, yb).unwrap());
        prop_assert_eq!(ya < yb, wa < wb);
    }
}

#[test]
fn mle_recovers_generating_parameters() {
    let gen = GpdParams::new(0.0, 1.0, 0.25).unwrap();
    let xs: Vec<f64> = gpd_sample(&gen, 5000, 2024).into_iter().filter(|x| *x > 0.0).collect();
    let fit = gpd_mle(&xs).unwrap();
    assert!((0.9..=1.1).contains(&fit.params.scale), "{:?}", fit.params);
    assert!((0.15..=0.35).contains(&fit.params.shape), "{:?}", fit.params);
}

#[test]
fn mle_beats_truth_in_nearly_every_replicate() {
    let gen = GpdParams::new(0.0, 1.0, 0.25).unwrap();
    let reps = 200;
    let wins = (0..reps)
        .filter(|&r| {
            let xs: Vec<f64> = gpd_sample(&gen, 5000, 10_000 + r).into_iter().filter(|x| *x > 0.0).collect();
            let fit = gpd_mle(&xs).unwrap();
            fit.log_likelihood >= gpd_log_likelihood(&xs, 1.0, 0.25)
        })
        .count();
    assert!(wins as f64 >= 0.95 * reps as f64, "{wins}/{reps}");
}

#[test]
fn transformed_sample_is_standard_normal() {
    let p = GpdParams::new(2.0, 0.8, 0.3).unwrap();
    let n = 5000;
    let mut w: Vec<f64> = gpd_sample(&p, n, 77)
        .into_iter()
        .map(|y| tail_to_gaussian(&p, y.max(2.0 + 1e-12)).unwrap())
        .collect();
    w.sort_by(f64::total_cmp);
    let d = w
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic 1% critical value of the one-sample KS statistic.
    let critical = 1.6276 / (n as f64).sqrt();
    assert!(d < critical, "D = {d}, critical {critical}");
}

#[test]
fn fixture_column_is_heavy_tailed() {
    let golden: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("golden/kurtosis.json")).unwrap()).unwrap();
    let data = load_observations(&fixtures().join(golden["file"].as_str().unwrap())).unwrap();
    assert_eq!(golden["column"], "y1");
    let k = kurtosis(&data.y[0]).unwrap();
    let expected = golden["kurtosis"].as_f64().unwrap();
    assert!((k - expected).abs() < 1e-9, "{k} vs {expected}");
    assert!(k > 3.0 + golden["margin_above_gaussian"].as_f64().unwrap());
}
