use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rmse_paired;
use crate::classify::{classify_mh, fit_membership_field, MembershipFieldConfig, MembershipLabels};
use crate::coregmix::{fit, fit_gaussian_baseline, FitConfig, ModelKind, SpatialDataset};
use crate::error::{Error, Result};
use crate::risk::{component_medians, predictive_summary, PredictionGrid};
use crate::seeds::{self, stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub fit: FitConfig,
    /// Body probabilities for the classifier; ignored by the baseline.
    pub p: [f64; 2],
    pub votes: usize,
    /// Predictive draws per held-out site.
    pub samples: usize,
    pub membership: MembershipFieldConfig,
    /// Use the dataset's own membership labels instead of classifying.
    pub use_given_labels: bool,
    pub point: PointPrediction,
}

/// Summary of the predictive distribution scored against held-out values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointPrediction {
    Mean,
    Median,
    /// Median of the more probable component.
    Component,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig {
                covariance: false,
                ..FitConfig::default()
            },
            p: [0.9, 0.9],
            votes: 100,
            samples: 1000,
            membership: MembershipFieldConfig::default(),
            use_given_labels: false,
            point: PointPrediction::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub site: usize,
    pub fold: usize,
    /// 1 or 2.
    pub variable: usize,
    pub observed: f64,
    /// Point prediction used for the error, see [`CvConfig::point`].
    pub predicted: f64,
    pub mean: f64,
    pub median: f64,
    pub component: f64,
    pub p_tail: f64,
    /// Whether the site truly belongs to the tail, when that is known.
    pub true_tail: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub size: usize,
    pub rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub kind: ModelKind,
    pub folds: Vec<FoldRecord>,
    pub predictions: Vec<HeldOutPrediction>,
    pub pooled_rmse: f64,
    /// Pooled over held-out values whose true membership is the tail.
    pub pooled_tail_rmse: Option<f64>,
}

impl CvResult {
    pub fn failures(&self) -> usize {
        self.folds.iter().filter(|f| f.error.is_some()).count()
    }

    pub fn write_predictions_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["site", "fold", "variable", "observed", "predicted", "p_tail", "true_tail"])?;
        for p in &self.predictions {
            out.write_record([
                p.site.to_string(),
                p.fold.to_string(),
                p.variable.to_string(),
                p.observed.to_string(),
                p.predicted.to_string(),
                p.p_tail.to_string(),
                p.true_tail.map_or_else(|| "NA".to_string(), |t| u8::from(t).to_string()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_folds_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fold", "size", "rmse", "error"])?;
        for f in &self.folds {
            out.write_record([
                f.fold.to_string(),
                f.size.to_string(),
                f.rmse.map_or_else(|| "NA".to_string(), |x| x.to_string()),
                f.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Random partition of `0..n` into `k` folds whose sizes differ by at most
/// one. Each fold is sorted.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Input(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, &[stream::FOLDS]));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, site) in order.into_iter().enumerate() {
        folds[i % k].push(site);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn true_tail(data: &SpatialDataset, var: usize, site: usize) -> Option<bool> {
    if let Some(t) = &data.truth {
        return Some(t.membership[var][site].is_tail());
    }
    data.labels[var].as_ref().map(|l| l.labels[site].is_tail())
}

fn run_fold(
    data: &SpatialDataset,
    test: &[usize],
    fold: usize,
    config: &CvConfig,
    seed: u64,
) -> Result<Vec<HeldOutPrediction>> {
    let mut in_test = vec![false; data.len()];
    for &i in test {
        in_test[i] = true;
    }
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_test[i]).collect();
    let train = data.subset(&train_idx);
    let held = data.subset(test);
    let fold_seed = seeds::derive(seed, &[stream::FOLDS, fold as u64]);

    let (fitted, p_tail) = match config.fit.kind {
        ModelKind::GaussianBaseline => {
            (fit_gaussian_baseline(&train, &config.fit)?, [vec![0.0; test.len()], vec![0.0; test.len()]])
        }
        ModelKind::Mixture => {
            let mut labels: Vec<MembershipLabels> = Vec::with_capacity(2);
            for v in 0..2 {
                let l = match (&train.labels[v], config.use_given_labels) {
                    (Some(l), true) => l.clone(),
                    (None, true) => {
                        return Err(Error::Input(format!("variable {} has no membership labels", v + 1)));
                    }
                    _ => classify_mh(
                        &train.y[v],
                        config.p[v],
                        config.votes,
                        seeds::derive(fold_seed, &[stream::CLASSIFY, v as u64]),
                    )?,
                };
                labels.push(l);
            }
            let fitted = fit(&train, [&labels[0], &labels[1]], &config.fit)?;
            let mut p_tail: [Vec<f64>; 2] = Default::default();
            for v in 0..2 {
                let field = fit_membership_field(&train.locations, &labels[v], &config.membership)?;
                p_tail[v] = field.predict(&held.locations)?;
            }
            (fitted, p_tail)
        }
    };
    let grid = PredictionGrid::new(held.locations.clone(), held.covariates.clone(), p_tail)?;
    let summary = predictive_summary(&fitted, &grid, config.samples, seeds::derive(fold_seed, &[stream::PREDICT]))?;
    let medians = component_medians(&fitted, &grid)?;
    Ok(summary
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let (cell, v) = (j / 2, j % 2);
            let site = test[cell];
            let component = medians[cell][v][usize::from(s.p_tail > 0.5)];
            HeldOutPrediction {
                site,
                fold,
                variable: v + 1,
                observed: data.y[v][site],
                predicted: match config.point {
                    PointPrediction::Mean => s.mean,
                    PointPrediction::Median => s.median,
                    PointPrediction::Component => component,
                },
                mean: s.mean,
                median: s.median,
                component,
                p_tail: s.p_tail,
                true_tail: true_tail(data, v, site),
            }
        })
        .collect())
}

/// k-fold cross-validation of the model in `config.fit.kind`.
///
/// Each fold is removed, the whole pipeline (classification, fit,
/// membership surface) is rerun on the rest, and the held-out values are
/// predicted by their predictive mean on the data scale. A fold that fails,
/// for example because its training labels are all one class, is recorded
/// and left out of the pooled error.
pub fn kfold_cv(data: &SpatialDataset, k: usize, config: &CvConfig, seed: u64) -> Result<CvResult> {
    let folds = assign_folds(data.len(), k, seed)?;
    let outcomes: Vec<Result<Vec<HeldOutPrediction>>> =
        folds.par_iter().enumerate().map(|(f, test)| run_fold(data, test, f, config, seed)).collect();

    let mut records = Vec::with_capacity(k);
    let mut predictions = Vec::new();
    for (f, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(p) => {
                let pred: Vec<f64> = p.iter().map(|h| h.predicted).collect();
                let obs: Vec<f64> = p.iter().map(|h| h.observed).collect();
                records.push(FoldRecord {
                    fold: f,
                    size: folds[f].len(),
                    rmse: Some(rmse_paired(&pred, &obs)?),
                    error: None,
                });
                predictions.extend(p);
            }
            Err(e) => records.push(FoldRecord {
                fold: f,
                size: folds[f].len(),
                rmse: None,
                error: Some(format!("{}: {e}", e.category())),
            }),
        }
    }
    if predictions.is_empty() {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::insufficient(format!("successful folds (first failure: {first})"), 1, 0));
    }
    let pooled = |sel: &dyn Fn(&HeldOutPrediction) -> bool| -> Result<Option<f64>> {
        let (pred, obs): (Vec<f64>, Vec<f64>) =
            predictions.iter().filter(|h| sel(h)).map(|h| (h.predicted, h.observed)).unzip();
        if pred.is_empty() {
            Ok(None)
        } else {
            rmse_paired(&pred, &obs).map(Some)
        }
    };
    let pooled_rmse = pooled(&|_| true)?.expect("at least one prediction");
    let pooled_tail_rmse = pooled(&|h| h.true_tail == Some(true))?;
    Ok(CvResult {
        k,
        kind: config.fit.kind,
        folds: records,
        predictions,
        pooled_rmse,
        pooled_tail_rmse,
    })
}
