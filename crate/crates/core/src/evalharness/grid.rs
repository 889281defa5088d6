use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{kfold_cv, CvConfig};
use crate::classify::classify_mh;
use crate::coregmix::{fit, SpatialDataset};
use crate::error::{Error, Result};
use crate::seeds::{self, stream};

/// 0.75, 0.76, ..., 0.99.
pub fn default_p_grid() -> Vec<f64> {
    (75..=99).map(|i| f64::from(i) / 100.0).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchConfig {
    /// Classifier, fit and prediction settings; its `p` is overwritten per
    /// cell.
    pub cv: CvConfig,
    pub folds: usize,
    pub dic_samples: usize,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            cv: CvConfig::default(),
            folds: 5,
            dic_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p1: f64,
    pub p2: f64,
    pub dic: Option<f64>,
    pub rmse: Option<f64>,
    pub error: Option<String>,
    /// DIC rank plus RMSE rank among the cells that succeeded.
    pub rank_sum: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub cells: Vec<GridCell>,
    pub selected: (f64, f64),
}

impl GridSearchResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["p1", "p2", "dic", "rmse", "rank_sum", "selected", "error"])?;
        for c in &self.cells {
            out.write_record([
                c.p1.to_string(),
                c.p2.to_string(),
                na(c.dic),
                na(c.rmse),
                c.rank_sum.map_or_else(|| "NA".to_string(), |r| r.to_string()),
                u8::from((c.p1, c.p2) == self.selected).to_string(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Competition ranks (1 = smallest; ties share the lowest rank).
fn ranks(values: &[f64]) -> Vec<usize> {
    values.iter().map(|v| 1 + values.iter().filter(|w| w < &v).count()).collect()
}

/// Fill in rank sums and return the index of the selected cell: smallest
/// rank sum, ties going to larger `p1 + p2` and then larger `p1`.
pub fn select_cell(cells: &mut [GridCell]) -> Option<usize> {
    let ok: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].dic.is_some() && cells[i].rmse.is_some()).collect();
    let dic: Vec<f64> = ok.iter().map(|&i| cells[i].dic.unwrap()).collect();
    let err: Vec<f64> = ok.iter().map(|&i| cells[i].rmse.unwrap()).collect();
    let (rd, re) = (ranks(&dic), ranks(&err));
    for (j, &i) in ok.iter().enumerate() {
        cells[i].rank_sum = Some(rd[j] + re[j]);
    }
    ok.into_iter().min_by(|&a, &b| {
        let (ca, cb) = (&cells[a], &cells[b]);
        ca.rank_sum
            .cmp(&cb.rank_sum)
            .then((cb.p1 + cb.p2).total_cmp(&(ca.p1 + ca.p2)))
            .then(cb.p1.total_cmp(&ca.p1))
    })
}

fn evaluate_cell(data: &SpatialDataset, p: [f64; 2], config: &GridSearchConfig, seed: u64) -> Result<(f64, f64)> {
    let labels = [0, 1].map(|v| {
        classify_mh(
            &data.y[v],
            p[v],
            config.cv.votes,
            seeds::derive(seed, &[stream::CLASSIFY, v as u64, p[v].to_bits()]),
        )
    });
    let [l1, l2] = labels;
    let (l1, l2) = (l1?, l2?);
    let fitted = fit(data, [&l1, &l2], &config.cv.fit)?;
    let dic = fitted.dic(config.dic_samples, seeds::derive(seed, &[stream::DIC]))?;
    let cv = CvConfig {
        p,
        use_given_labels: false,
        ..config.cv.clone()
    };
    // Every cell shares the fold assignment.
    let res = kfold_cv(data, config.folds, &cv, seed)?;
    Ok((dic.dic, res.pooled_rmse))
}

/// Evaluate every `(p1, p2)` pair from `grid` by DIC and cross-validated
/// RMSE and select the best by rank sum.
pub fn grid_search_p(data: &SpatialDataset, grid: &[f64], config: &GridSearchConfig, seed: u64) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::Input("empty probability grid".into()));
    }
    if let Some(p) = grid.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Domain(format!("grid probability {p} outside (0, 1)")));
    }
    let pairs: Vec<[f64; 2]> = grid.iter().flat_map(|&a| grid.iter().map(move |&b| [a, b])).collect();
    let mut cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&p| match evaluate_cell(data, p, config, seed) {
            Ok((dic, rmse)) => GridCell {
                p1: p[0],
                p2: p[1],
                dic: Some(dic),
                rmse: Some(rmse),
                error: None,
                rank_sum: None,
            },
            Err(e) => GridCell {
                p1: p[0],
                p2: p[1],
                dic: None,
                rmse: None,
                error: Some(format!("{}: {e}", e.category())),
                rank_sum: None,
            },
        })
        .collect();
    let best = select_cell(&mut cells).ok_or_else(|| {
        let first = cells.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        Error::insufficient(format!("successful grid cells (first failure: {first})"), 1, 0)
    })?;
    let selected = (cells[best].p1, cells[best].p2);
    Ok(GridSearchResult { cells, selected })
}
