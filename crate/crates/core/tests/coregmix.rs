use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use extremix::classify::{Membership, MembershipLabels};
use extremix::coregmix::{
    build_conditional_likelihood, fit, linear_predictor, log_marginal_likelihood, simulate_dataset, Component,
    CoregMixModel, FitConfig, FittedModel, Hyper, Region, SpatialDataset, WorkingRow,
};
use extremix::distfit::{normal::normal_ln_pdf, std_normal_cdf, tail_to_gaussian};
use extremix::evalharness::{scenario_model, ScenarioId};
use extremix::randomfield::{Locations, Point};

fn true_hyper(m: &CoregMixModel) -> Hyper {
    Hyper {
        ranges: vec![m.fields[0].range, m.fields[2].range],
        variances: m.fields.iter().map(|f| f.variance).collect(),
        tau: m.tau,
        lambda: m.lambda,
    }
}

fn true_labels(d: &SpatialDataset) -> [MembershipLabels; 2] {
    let t = d.truth.as_ref().unwrap();
    [t.labels(0), t.labels(1)]
}

fn with_lambda(mut m: CoregMixModel, lambda: f64) -> CoregMixModel {
    m.fields[3].variance = m.fields[1].variance * (1.0 - lambda * lambda);
    m.lambda = lambda;
    m
}

fn fit_with_true_labels(d: &SpatialDataset, cfg: &FitConfig) -> FittedModel {
    let l = true_labels(d);
    fit(d, [&l[0], &l[1]], cfg).unwrap()
}

fn fixed(m: &CoregMixModel) -> FitConfig {
    FitConfig {
        fixed_hyper: Some(true_hyper(m)),
        ..FitConfig::default()
    }
}

fn ks_statistic(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn a1_tail_counts_match_the_mixture_proportion() {
    let m = scenario_model(ScenarioId::A1);
    let (n, p): (f64, f64) = (1000.0, 0.75);
    let band = 3.0 * (n * p * (1.0 - p)).sqrt();
    for seed in 0..3 {
        let d = simulate_dataset(&m, 1000, Region::square(100.0), seed).unwrap();
        for v in 0..2 {
            let tails = d.truth.as_ref().unwrap().membership[v].iter().filter(|m| m.is_tail()).count();
            assert!((tails as f64 - n * (1.0 - p)).abs() <= band, "seed {seed}: {tails}");
        }
    }
}

/// With no shared tail field, the Gaussian-scale tail residuals of the two
/// variables at jointly extreme sites are uncorrelated.
#[test]
fn independent_tails_have_uncorrelated_residuals() {
    let m = with_lambda(scenario_model(ScenarioId::A1), 0.0);
    let reps = 200;
    let mut corr = Vec::with_capacity(reps);
    for seed in 0..reps as u64 {
        let d = simulate_dataset(&m, 400, Region::square(100.0), 1000 + seed).unwrap();
        let t = d.truth.as_ref().unwrap();
        let resid = |v: usize, s: usize| {
            let c = Component::of(v, Membership::Tail);
            let mean = m.alpha[c.index()] + m.beta[c.index()].iter().zip(&d.covariates[s]).map(|(b, x)| b * x).sum::<f64>();
            tail_to_gaussian(&m.tails[v], d.y[v][s]).unwrap() - mean
        };
        let both: Vec<usize> = (0..d.len()).filter(|&s| t.membership[0][s].is_tail() && t.membership[1][s].is_tail()).collect();
        if both.len() < 5 {
            continue;
        }
        let a: Vec<f64> = both.iter().map(|&s| resid(0, s)).collect();
        let b: Vec<f64> = both.iter().map(|&s| resid(1, s)).collect();
        let k = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / k, b.iter().sum::<f64>() / k);
        let sab: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        corr.push(sab / (saa * sbb).sqrt());
    }
    let k = corr.len() as f64;
    assert!(k >= 180.0);
    let mean = corr.iter().sum::<f64>() / k;
    let se = (corr.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean correlation {mean}, se {se}");
}

/// The transform inverts the simulator's tail draw exactly, so tail rows
/// minus their true linear predictor are iid observation noise.
#[test]
fn transformed_tail_rows_are_gaussian() {
    let m = scenario_model(ScenarioId::A1);
    let d = simulate_dataset(&m, 1000, Region::square(100.0), 17).unwrap();
    let t = d.truth.as_ref().unwrap();
    let l = true_labels(&d);
    let w = build_conditional_likelihood(&d, [&l[0], &l[1]], m.tails).unwrap();
    for v in 0..2 {
        let sd = 1.0 / m.tau[v].sqrt();
        let z: Vec<f64> = w
            .rows
            .iter()
            .filter(|r| r.component == Component::of(v, Membership::Tail))
            .map(|r| (r.value - linear_predictor(&m, r.component, &d.covariates[r.site], &t.latent, r.site)) / sd)
            .collect();
        let n = z.len() as f64;
        let d = ks_statistic(z);
        assert!(d < 1.6276 / n.sqrt(), "variable {v}: D = {d}");
    }
}

#[test]
fn posterior_sharpens_with_more_data() {
    let m = scenario_model(ScenarioId::A1);
    let rmse = |n: usize| {
        let mut total = 0.0;
        for seed in 0..3 {
            let d = simulate_dataset(&m, n, Region::square(100.0), 40 + seed).unwrap();
            let f = fit_with_true_labels(&d, &fixed(&m));
            let t = d.truth.as_ref().unwrap();
            let pred = f.predict_latent(&d.locations, &d.covariates).unwrap();
            let mut sse = 0.0;
            for s in 0..n {
                for c in Component::ALL {
                    let truth = linear_predictor(&m, c, &d.covariates[s], &t.latent, s);
                    sse += (pred[s].mean[c.index()] - truth).powi(2);
                }
            }
            total += (sse / (4 * n) as f64).sqrt();
        }
        total / 3.0
    };
    let r: Vec<f64> = [200, 500, 1000].into_iter().map(rmse).collect();
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn lambda_interval_covers_zero_without_shared_signal() {
    let m = with_lambda(scenario_model(ScenarioId::A1), 0.0);
    let reps = 50;
    let covered = (0..reps)
        .filter(|&r| {
            let d = simulate_dataset(&m, 300, Region::square(100.0), 2000 + r).unwrap();
            let f = fit_with_true_labels(&d, &FitConfig::default());
            f.estimate("lambda").unwrap().covers(0.0)
        })
        .count();
    assert!(covered as f64 >= 0.8 * reps as f64, "{covered}/{reps}");
}

#[test]
fn shuffled_second_variable_fits_with_lambda_near_zero() {
    let m = scenario_model(ScenarioId::A1);
    let reps = 9;
    let covered = (0..reps)
        .filter(|&r| {
            let mut d = simulate_dataset(&m, 300, Region::square(100.0), 3000 + r).unwrap();
            let mut idx: Vec<usize> = (0..d.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(r));
            let t = d.truth.as_ref().unwrap();
            let labels: Vec<Membership> = idx.iter().map(|&i| t.membership[0][i]).collect();
            d.y[1] = idx.iter().map(|&i| d.y[0][i]).collect();
            let l0 = t.labels(0);
            let l1 = MembershipLabels::from_labels(labels, l0.p, l0.threshold);
            let f = fit(&d, [&l0, &l1], &FitConfig::default()).unwrap();
            f.estimate("lambda").unwrap().covers(0.0)
        })
        .count();
    assert!(2 * covered > reps as usize, "{covered}/{reps}");
}

#[test]
fn isolated_observation_adds_its_predictive_density() {
    let m = scenario_model(ScenarioId::A1);
    let d = simulate_dataset(&m, 80, Region::square(100.0), 5).unwrap();
    let f = fit_with_true_labels(&d, &fixed(&m));
    let before = log_marginal_likelihood(&f.structure, &f.hyper, &f.working).unwrap();

    let x = vec![0.4, -1.1];
    let value = 1.7;
    let mut w = f.working.clone();
    let mut pts = w.locations.points().to_vec();
    pts.push(Point::new(1e7, 1e7));
    w.locations = Locations::new(pts).unwrap();
    w.covariates.push(x.clone());
    w.rows.push(WorkingRow {
        site: w.locations.len() - 1,
        component: Component::B1,
        value,
        original: value,
    });
    let after = log_marginal_likelihood(&f.structure, &f.hyper, &w).unwrap();

    // Fixed effects are integrated out, so the increment is the density of
    // the new value under its prior variance plus the fixed-effect
    // uncertainty, centred on the current estimate.
    let (beta, cov) = f.fixed_effects(0).unwrap();
    let xr: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
    let mean: f64 = xr.iter().zip(&beta).map(|(a, b)| a * b).sum();
    let mut spread = 0.0;
    for i in 0..xr.len() {
        for j in 0..xr.len() {
            spread += xr[i] * cov[i][j] * xr[j];
        }
    }
    let var = f.hyper.variances[0] + 1.0 / f.hyper.tau[0] + spread;
    let expected = normal_ln_pdf(value, mean, var.sqrt());
    assert!((after - before - expected).abs() < 1e-3, "{} vs {expected}", after - before);
}

fn permuted(d: &SpatialDataset, labels: &[MembershipLabels; 2], seed: u64) -> (SpatialDataset, [MembershipLabels; 2]) {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let p = d.subset(&idx);
    let l = [labels[0].subset(&idx), labels[1].subset(&idx)];
    (p, l)
}

#[test]
fn row_order_does_not_matter() {
    let m = scenario_model(ScenarioId::B2);
    let d = simulate_dataset(&m, 200, Region::square(100.0), 8).unwrap();
    let l = true_labels(&d);
    let (pd, pl) = permuted(&d, &l, 1);

    let a = fit(&d, [&l[0], &l[1]], &fixed(&m)).unwrap();
    let b = fit(&pd, [&pl[0], &pl[1]], &fixed(&m)).unwrap();
    assert!((a.log_marginal - b.log_marginal).abs() < 1e-9 * a.log_marginal.abs());

    let a = fit(&d, [&l[0], &l[1]], &FitConfig::default()).unwrap();
    let b = fit(&pd, [&pl[0], &pl[1]], &FitConfig::default()).unwrap();
    let (ea, eb) = (a.parameter_estimates().unwrap(), b.parameter_estimates().unwrap());
    for (x, y) in ea.iter().zip(&eb) {
        assert_eq!(x.name, y.name);
        assert!((x.estimate - y.estimate).abs() < 1e-9 * x.estimate.abs().max(1.0), "{}: {} vs {}", x.name, x.estimate, y.estimate);
    }
}

/// The optimiser's maximum is never grossly below the objective at the
/// generating hyperparameters.
#[test]
fn optimum_dominates_the_truth() {
    let m = scenario_model(ScenarioId::A1);
    let seeds = 10;
    let ok = (0..seeds)
        .filter(|&s| {
            let d = simulate_dataset(&m, 300, Region::square(100.0), 4000 + s).unwrap();
            let f = fit_with_true_labels(&d, &FitConfig::default());
            let at_truth = log_marginal_likelihood(&f.structure, &true_hyper(&m), &f.working).unwrap();
            at_truth <= f.log_marginal + 2.0 * f.theta.len() as f64
        })
        .count();
    assert!(ok as f64 >= 0.9 * seeds as f64, "{ok}/{seeds}");
}

#[test]
fn generating_model_beats_intercept_only_on_dic() {
    let m = scenario_model(ScenarioId::A1);
    let reps = 50;
    let wins = (0..reps)
        .filter(|&r| {
            let d = simulate_dataset(&m, 300, Region::square(100.0), 5000 + r).unwrap();
            let full = fit_with_true_labels(&d, &fixed(&m)).dic(500, r).unwrap();
            let cfg = FitConfig {
                spatial: false,
                covariates: false,
                ..FitConfig::default()
            };
            let plain = fit_with_true_labels(&d, &cfg).dic(500, r).unwrap();
            full.dic < plain.dic
        })
        .count();
    assert!(wins as f64 >= 0.9 * reps as f64, "{wins}/{reps}");
}

#[test]
fn intervals_bracket_their_estimates() {
    let m = scenario_model(ScenarioId::B1);
    let d = simulate_dataset(&m, 250, Region::square(100.0), 6).unwrap();
    let f = fit_with_true_labels(&d, &FitConfig::default());
    for e in f.parameter_estimates().unwrap() {
        assert!(e.lower <= e.estimate && e.estimate <= e.upper, "{e:?}");
    }
    let pred = f.predict_latent(&d.locations, &d.covariates).unwrap();
    for p in pred.iter().take(25) {
        for a in 0..4 {
            assert!(p.cov[a * 4 + a] >= 0.0);
        }
    }
}

#[test]
fn fixture_dic_monte_carlo_error_is_small() {
    let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let f = FittedModel::from_json(&std::fs::read_to_string(dir.join("conurbation_model.json")).unwrap()).unwrap();
    let data = extremix::io::load_observations(&dir.join("synthetic_conurbation.csv")).unwrap();
    assert_eq!(data.len(), 2745);
    let d = f.dic(500, 3).unwrap();
    assert!(d.mc_se < 0.01 * d.dic.abs(), "DIC {} with MC SE {}", d.dic, d.mc_se);
}
