use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use extremix::classify::{classify_mh, MembershipFieldConfig, MembershipLabels};
use extremix::coregmix::{
    fit, fit_gaussian_baseline, simulate_dataset_with, FitConfig, FittedModel, MembershipDesign, ModelKind, Region,
    SpatialDataset, FORMAT_VERSION,
};
use extremix::evalharness::{
    grid_search_p, kfold_cv, run_scenario, scenario_model, CvConfig, GridSearchConfig, PointPrediction, ScenarioId,
    ScenarioSpec,
};
use extremix::io::{atomic_write, load_observations, read_grid, write_observations, write_predictions};
use extremix::randomfield::Locations;
use extremix::risk::{exceedance_map, predictive_summary, tail_probabilities, PredictionGrid, RiskMode};
use extremix::seeds::{self, stream};
use extremix::synth::{synthetic_conurbation, CONURBATION_SEED, CONURBATION_SITES};

use crate::config::Settings;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Compute(extremix::Error),
}

impl From<extremix::Error> for Failure {
    fn from(e: extremix::Error) -> Self {
        Failure::Compute(e)
    }
}

type Outcome<T> = Result<T, Failure>;

const DEFAULT_SEED: u64 = 1;

/// Resolve a setting, recording the default so the manifest echoes it.
fn or<T: Clone>(slot: &mut Option<T>, default: T) -> T {
    slot.get_or_insert(default).clone()
}

fn required<T: Clone>(slot: &Option<T>, name: &str) -> Outcome<T> {
    slot.clone().ok_or_else(|| Failure::Usage(format!("--{} is required", name.replace('_', "-"))))
}

fn parse<T: std::str::FromStr<Err = extremix::Error>>(s: &str) -> Outcome<T> {
    s.parse().map_err(|e: extremix::Error| Failure::Usage(e.to_string()))
}

/// Output files are rendered in memory first and written together, so a
/// failing command leaves nothing behind.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn add<F>(&mut self, name: impl Into<String>, render: F) -> Outcome<()>
    where
        F: FnOnce(&mut Vec<u8>) -> extremix::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }

    fn commit(&self) -> Outcome<Vec<String>> {
        fs::create_dir_all(&self.dir).map_err(extremix::Error::from)?;
        for (name, bytes) in &self.files {
            atomic_write(&self.dir.join(name), |w| Ok(w.write_all(bytes)?))?;
        }
        Ok(self.files.iter().map(|(n, _)| n.clone()).collect())
    }
}

#[derive(Serialize)]
struct Versions {
    extremix: &'static str,
    model_format: u32,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    settings: &'a Settings,
    seed: Option<u64>,
    versions: Versions,
    threads: usize,
    wall_time_seconds: f64,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

pub fn run(command: &str, settings: &Settings) -> Outcome<()> {
    let start = Instant::now();
    let mut s = settings.clone();
    let out = Outputs::new(or(&mut s.out, PathBuf::from(".")));
    let (out, summary) = match command {
        "simulate" => simulate(&mut s, out)?,
        "synth" => synth(&mut s, out)?,
        "classify" => classify(&mut s, out)?,
        "fit" => fit_cmd(&mut s, out)?,
        "predict" => predict(&mut s, out)?,
        "risk" => risk(&mut s, out)?,
        "cv" => cv(&mut s, out)?,
        "gridsearch" => gridsearch(&mut s, out)?,
        "scenario" => scenario(&mut s, out)?,
        other => return Err(Failure::Usage(format!("unknown command {other}"))),
    };
    let outputs = out.commit()?;
    let manifest = Manifest {
        command,
        settings: &s,
        seed: s.seed,
        versions: Versions {
            extremix: env!("CARGO_PKG_VERSION"),
            model_format: FORMAT_VERSION,
        },
        threads: rayon::current_num_threads(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs,
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(extremix::Error::from)?;
    atomic_write(&out.dir.join(format!("{command}_manifest.json")), |w| Ok(w.write_all(text.as_bytes())?))?;
    Ok(())
}

type Done = (Outputs, serde_json::Value);

fn simulate(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let id: ScenarioId = parse(&or(&mut s.scenario, "A1".into()))?;
    let n = or(&mut s.n, 500);
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let design = match s.clustered_range {
        Some(range) => MembershipDesign::Clustered { range },
        None => MembershipDesign::Independent,
    };
    let mut data = simulate_dataset_with(&scenario_model(id), n, Region::square(100.0), design, seed)?;
    if or(&mut s.with_membership, false) {
        let t = data.truth.as_ref().expect("simulated data carry their truth");
        data.labels = [Some(t.labels(0)), Some(t.labels(1))];
    }
    out.add("observations.csv", |w| write_observations(&data, w))?;
    Ok((out, serde_json::json!({ "sites": n })))
}

fn synth(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let n = or(&mut s.n, CONURBATION_SITES);
    let seed = or(&mut s.seed, CONURBATION_SEED);
    let data = synthetic_conurbation(n, seed)?;
    out.add("synthetic_conurbation.csv", |w| write_observations(&data, w))?;
    Ok((out, serde_json::json!({ "sites": n })))
}

fn load_input(s: &Settings) -> Outcome<SpatialDataset> {
    Ok(load_observations(&required(&s.input, "input")?)?)
}

fn classify(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let mut data = load_input(s)?;
    let p = [or(&mut s.p1, 0.9), or(&mut s.p2, 0.9)];
    let votes = or(&mut s.votes, 100);
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let mut labels = Vec::with_capacity(2);
    for v in 0..2 {
        labels.push(classify_mh(&data.y[v], p[v], votes, seeds::derive(seed, &[stream::CLASSIFY, v as u64]))?);
    }
    let tails: Vec<usize> = labels.iter().map(MembershipLabels::tail_count).collect();
    data.labels = [Some(labels[0].clone()), Some(labels[1].clone())];
    out.add("classified.csv", |w| write_observations(&data, w))?;
    out.add("labels.json", |w| {
        serde_json::to_writer_pretty(w, &labels)?;
        Ok(())
    })?;
    Ok((out, serde_json::json!({ "tail_counts": tails })))
}

fn read_labels(path: &Path, n: usize) -> Outcome<[MembershipLabels; 2]> {
    let text = fs::read_to_string(path).map_err(extremix::Error::from)?;
    let labels: [MembershipLabels; 2] = serde_json::from_str(&text).map_err(extremix::Error::from)?;
    if labels.iter().any(|l| l.len() != n) {
        return Err(Failure::Compute(extremix::Error::Input(format!(
            "labels in {} do not match the {n} observations",
            path.display()
        ))));
    }
    Ok(labels)
}

fn fit_cmd(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let data = load_input(s)?;
    let baseline = or(&mut s.baseline, false);
    let config = FitConfig {
        smoothness: or(&mut s.smoothness, 1.0),
        fixed_lambda: s.fixed_lambda,
        ..FitConfig::default()
    };
    let fitted = if baseline {
        fit_gaussian_baseline(&data, &config)?
    } else {
        let labels = match &s.labels {
            Some(p) => read_labels(p, data.len())?,
            None => match &data.labels {
                [Some(a), Some(b)] => [a.clone(), b.clone()],
                _ => {
                    return Err(Failure::Usage(
                        "the mixture needs labels: pass --labels or membership columns (see classify)".into(),
                    ))
                }
            },
        };
        fit(&data, [&labels[0], &labels[1]], &config)?
    };
    let estimates = fitted.parameter_estimates()?;
    let dic_samples = or(&mut s.dic_samples, 0);
    let dic = if dic_samples > 0 {
        Some(fitted.dic(dic_samples, or(&mut s.seed, DEFAULT_SEED))?)
    } else {
        None
    };
    let json = fitted.to_json()?;
    out.add("model.json", |w| Ok(w.write_all(json.as_bytes())?))?;
    out.add("estimates.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["parameter", "estimate", "sd", "lower", "upper"])?;
        for e in &estimates {
            c.write_record([
                e.name.clone(),
                e.estimate.to_string(),
                e.sd.to_string(),
                e.lower.to_string(),
                e.upper.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    Ok((
        out,
        serde_json::json!({
            "log_marginal": fitted.log_marginal,
            "converged": fitted.optimiser.converged,
            "evaluations": fitted.optimiser.evaluations,
            "dic": dic,
        }),
    ))
}

fn load_model(s: &Settings) -> Outcome<FittedModel> {
    let path = required(&s.model, "model")?;
    let text = fs::read_to_string(&path).map_err(extremix::Error::from)?;
    Ok(FittedModel::from_json(&text)?)
}

/// Prediction locations from `--grid`, or a regular raster over the data's
/// bounding box with covariates held at zero.
pub fn build_grid(s: &mut Settings, fitted: &FittedModel) -> Outcome<PredictionGrid> {
    let j = fitted.n_covariates();
    let (locations, covariates, shape) = match &s.grid {
        Some(path) => {
            let file = fs::File::open(path).map_err(extremix::Error::from)?;
            let (locs, covs) = read_grid(file)?;
            if fitted.structure.covariates && covs.first().map_or(0, Vec::len) != j {
                return Err(Failure::Compute(extremix::Error::Input(format!(
                    "the model has {j} covariates but the grid file has {}",
                    covs.first().map_or(0, Vec::len)
                ))));
            }
            (locs, covs, None)
        }
        None => {
            let pts = fitted.working.locations.points();
            let fold = |f: fn(f64, f64) -> f64, g: fn(&extremix::randomfield::Point) -> f64, init: f64| {
                pts.iter().map(g).fold(init, f)
            };
            let x0 = or(&mut s.x0, fold(f64::min, |p| p.x, f64::INFINITY));
            let x1 = or(&mut s.x1, fold(f64::max, |p| p.x, f64::NEG_INFINITY));
            let y0 = or(&mut s.y0, fold(f64::min, |p| p.y, f64::INFINITY));
            let y1 = or(&mut s.y1, fold(f64::max, |p| p.y, f64::NEG_INFINITY));
            let (nx, ny) = (or(&mut s.nx, 50), or(&mut s.ny, 50));
            let locs = Locations::grid(x0, x1, y0, y1, nx, ny)?;
            let n = locs.len();
            (locs, vec![vec![0.0; j]; n], Some((nx, ny)))
        }
    };
    let p_tail = tail_probabilities(fitted, &locations, &MembershipFieldConfig::default())?;
    let mut grid = PredictionGrid::new(locations, covariates, p_tail)?;
    grid.shape = shape;
    Ok(grid)
}

fn predict(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let fitted = load_model(s)?;
    let grid = build_grid(s, &fitted)?;
    let samples = or(&mut s.samples, 1000);
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let rows = predictive_summary(&fitted, &grid, samples, seed)?;
    out.add("predictions.csv", |w| write_predictions(&rows, w))?;
    Ok((out, serde_json::json!({ "cells": grid.len() })))
}

fn risk(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let t = [required(&s.t1, "t1")?, required(&s.t2, "t2")?];
    let mode: RiskMode = parse(&or(&mut s.mode, "joint".into()))?;
    let fitted = load_model(s)?;
    let grid = build_grid(s, &fitted)?;
    let repetitions = or(&mut s.repetitions, 100);
    let samples = or(&mut s.samples, 500);
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let map = exceedance_map(&fitted, &grid, t, repetitions, samples, mode, seed)?;
    let undefined = map.cells.iter().filter(|c| c.p.is_none()).count();
    out.add("risk.csv", |w| map.write_csv(w))?;
    Ok((out, serde_json::json!({ "cells": grid.len(), "undefined_cells": undefined })))
}

fn parse_point(s: &str) -> Outcome<PointPrediction> {
    match s {
        "mean" => Ok(PointPrediction::Mean),
        "median" => Ok(PointPrediction::Median),
        "component" => Ok(PointPrediction::Component),
        other => Err(Failure::Usage(format!("unknown point prediction '{other}' (mean, median or component)"))),
    }
}

fn cv(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let data = load_input(s)?;
    let k = or(&mut s.k, 20);
    let mut config = CvConfig {
        p: [or(&mut s.p1, 0.9), or(&mut s.p2, 0.9)],
        votes: or(&mut s.votes, 100),
        samples: or(&mut s.samples, 1000),
        point: parse_point(&or(&mut s.point, "mean".into()))?,
        use_given_labels: or(&mut s.given_labels, false),
        ..CvConfig::default()
    };
    if or(&mut s.baseline, false) {
        config.fit.kind = ModelKind::GaussianBaseline;
    }
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let res = kfold_cv(&data, k, &config, seed)?;
    println!(
        "pooled RMSE {:.6}; tail RMSE {}; failed folds {}",
        res.pooled_rmse,
        res.pooled_tail_rmse.map_or_else(|| "NA".into(), |r| format!("{r:.6}")),
        res.failures()
    );
    out.add("cv_predictions.csv", |w| res.write_predictions_csv(w))?;
    out.add("cv_folds.csv", |w| res.write_folds_csv(w))?;
    Ok((
        out,
        serde_json::json!({
            "pooled_rmse": res.pooled_rmse,
            "pooled_tail_rmse": res.pooled_tail_rmse,
            "failed_folds": res.failures(),
        }),
    ))
}

/// `p_min, p_min + step, ...` up to `p_max`, rounded to kill drift.
fn probability_grid(lo: f64, hi: f64, step: f64) -> Outcome<Vec<f64>> {
    if lo > hi {
        return Err(Failure::Usage(format!("p_min {lo} exceeds p_max {hi}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| ((lo + i as f64 * step) * 1e10).round() / 1e10).collect())
}

fn gridsearch(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let data = load_input(s)?;
    let grid = probability_grid(or(&mut s.p_min, 0.75), or(&mut s.p_max, 0.99), or(&mut s.p_step, 0.01))?;
    let mut config = GridSearchConfig {
        folds: or(&mut s.folds, 5),
        dic_samples: or(&mut s.dic_samples, 500),
        ..GridSearchConfig::default()
    };
    config.cv.votes = or(&mut s.votes, 100);
    config.cv.samples = or(&mut s.samples, 500);
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let res = grid_search_p(&data, &grid, &config, seed)?;
    println!("selected p1 = {}, p2 = {}", res.selected.0, res.selected.1);
    let failed = res.cells.iter().filter(|c| c.error.is_some()).count();
    out.add("gridsearch.csv", |w| res.write_csv(w))?;
    Ok((out, serde_json::json!({ "selected": [res.selected.0, res.selected.1], "failed_cells": failed })))
}

fn scenario(s: &mut Settings, mut out: Outputs) -> Outcome<Done> {
    let id: ScenarioId = parse(&or(&mut s.scenario, "A1".into()))?;
    let mut spec = if or(&mut s.full_scale, false) {
        ScenarioSpec::full_scale(id)
    } else {
        ScenarioSpec::new(id)
    };
    spec.replicates = or(&mut s.replicates, spec.replicates);
    spec.n = or(&mut s.n, spec.n);
    let seed = or(&mut s.seed, DEFAULT_SEED);
    let res = run_scenario(&spec, seed)?;
    if !res.failures.is_empty() {
        eprintln!("{} of {} replicates failed and were excluded", res.failures.len(), spec.replicates);
    }
    out.add(format!("scenario_{id}_summary.csv"), |w| res.write_summary_csv(w))?;
    out.add(format!("scenario_{id}_qq.csv"), |w| res.write_qq_csv(w))?;
    out.add(format!("scenario_{id}_classification.csv"), |w| res.write_classification_csv(w))?;
    Ok((
        out,
        serde_json::json!({
            "completed_replicates": res.completed(),
            "failures": res.failures,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_grids() {
        let g = probability_grid(0.75, 0.99, 0.01).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!((g[0], g[5], g[24]), (0.75, 0.8, 0.99));
        assert_eq!(probability_grid(0.9, 0.9, 0.01).unwrap(), vec![0.9]);
        assert!(probability_grid(0.9, 0.8, 0.01).is_err());
    }

    #[test]
    fn defaults_are_recorded() {
        let mut slot = None;
        assert_eq!(or(&mut slot, 5), 5);
        assert_eq!(slot, Some(5));
        let mut set = Some(2);
        assert_eq!(or(&mut set, 5), 2);
    }
}
