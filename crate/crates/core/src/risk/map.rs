use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cell_predictives, tail_cut, tails, PredictionGrid};
use crate::classify::empirical_quantile;
use crate::coregmix::FittedModel;
use crate::error::{Error, Result};
use crate::seeds::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskMode {
    /// `Pr(y1 > t1 and y2 > t2)`.
    Joint,
    /// `Pr(y1 > t1 | y2 > t2)`.
    Conditional,
}

impl fmt::Display for RiskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskMode::Joint => "joint",
            RiskMode::Conditional => "conditional",
        })
    }
}

impl FromStr for RiskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(RiskMode::Joint),
            "conditional" => Ok(RiskMode::Conditional),
            other => Err(Error::Input(format!("unknown risk mode '{other}' (joint or conditional)"))),
        }
    }
}

/// Monte Carlo summary for one cell. `None` marks a probability that no
/// repetition could estimate, or a coefficient of variation with zero mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCell {
    pub x: f64,
    pub y: f64,
    pub p: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub sd: Option<f64>,
    pub cv: Option<f64>,
    /// Repetitions in which the probability was defined.
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMap {
    pub cells: Vec<RiskCell>,
    pub thresholds: [f64; 2],
    pub mode: RiskMode,
    pub repetitions: usize,
    pub samples: usize,
    pub shape: Option<(usize, usize)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl RiskMap {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "p", "ci_lo", "ci_hi", "cv", "t1", "t2", "mode", "R"])?;
        let (t1, t2) = (self.thresholds[0].to_string(), self.thresholds[1].to_string());
        let (mode, r) = (self.mode.to_string(), self.repetitions.to_string());
        for c in &self.cells {
            out.write_record([
                c.x.to_string(),
                c.y.to_string(),
                fmt_opt(c.p),
                fmt_opt(c.ci_lo),
                fmt_opt(c.ci_hi),
                fmt_opt(c.cv),
                t1.clone(),
                t2.clone(),
                mode.clone(),
                r.clone(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Exceedance probability map with Monte Carlo uncertainty.
///
/// Each of `repetitions` rounds draws `samples` predictive values per cell
/// and records the empirical probability; the map reports the mean over
/// rounds, their 2.5% and 97.5% percentiles, and sd / mean.
pub fn exceedance_map(
    fitted: &FittedModel,
    grid: &PredictionGrid,
    thresholds: [f64; 2],
    repetitions: usize,
    samples: usize,
    mode: RiskMode,
    seed: u64,
) -> Result<RiskMap> {
    if repetitions < 2 {
        return Err(Error::Input(format!("need at least 2 repetitions, got {repetitions}")));
    }
    if samples == 0 {
        return Err(Error::Input("need at least one sample per repetition".into()));
    }
    if thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::Input("thresholds must not be NaN".into()));
    }
    let cells = cell_predictives(fitted, grid)?;
    let tails = tails(fitted);
    // Tail draws are compared on the working scale, where the back-transform
    // is monotone.
    let cut = |v: usize| tails.as_ref().map_or(f64::INFINITY, |g| tail_cut(&g[v], thresholds[v]));
    let tail_cuts = [cut(0), cut(1)];

    let summaries: Vec<Result<RiskCell>> = cells
        .par_iter()
        .enumerate()
        .map(|(cell, cp)| {
            let mut per_rep = Vec::with_capacity(repetitions);
            for rep in 0..repetitions {
                let mut rng = seeds::rng(seed, &[stream::RISK, cell as u64, rep as u64]);
                let (mut both, mut second) = (0usize, 0usize);
                for _ in 0..samples {
                    let (w, t) = cp.draw(&mut rng);
                    let e1 = w[0] > if t[0] { tail_cuts[0] } else { thresholds[0] };
                    let e2 = w[1] > if t[1] { tail_cuts[1] } else { thresholds[1] };
                    both += usize::from(e1 && e2);
                    second += usize::from(e2);
                }
                match mode {
                    RiskMode::Joint => per_rep.push(both as f64 / samples as f64),
                    RiskMode::Conditional if second > 0 => per_rep.push(both as f64 / second as f64),
                    RiskMode::Conditional => {}
                }
            }
            let pt = grid.point(cell);
            summarise(pt.x, pt.y, &per_rep)
        })
        .collect();
    Ok(RiskMap {
        cells: summaries.into_iter().collect::<Result<_>>()?,
        thresholds,
        mode,
        repetitions,
        samples,
        shape: grid.shape,
    })
}

fn summarise(x: f64, y: f64, reps: &[f64]) -> Result<RiskCell> {
    if reps.is_empty() {
        return Ok(RiskCell {
            x,
            y,
            p: None,
            ci_lo: None,
            ci_hi: None,
            sd: None,
            cv: None,
            defined: 0,
        });
    }
    let n = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / n;
    let sd = if reps.len() > 1 {
        Some((reps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        None
    };
    Ok(RiskCell {
        x,
        y,
        p: Some(mean),
        ci_lo: Some(empirical_quantile(reps, 0.025)?.min(mean)),
        ci_hi: Some(empirical_quantile(reps, 0.975)?.max(mean)),
        sd,
        cv: sd.filter(|_| mean > 0.0).map(|s| s / mean),
        defined: reps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parses_and_prints() {
        for m in [RiskMode::Joint, RiskMode::Conditional] {
            assert_eq!(m.to_string().parse::<RiskMode>().unwrap(), m);
        }
        assert!("both".parse::<RiskMode>().is_err());
    }

    #[test]
    fn summary_of_constant_repetitions() {
        let c = summarise(0.0, 0.0, &[0.25; 10]).unwrap();
        assert_eq!((c.p, c.ci_lo, c.ci_hi), (Some(0.25), Some(0.25), Some(0.25)));
        assert_eq!(c.cv, Some(0.0));
        let z = summarise(0.0, 0.0, &[0.0; 4]).unwrap();
        assert_eq!(z.cv, None);
        assert_eq!(summarise(0.0, 0.0, &[]).unwrap().p, None);
    }

    #[test]
    fn csv_marks_missing_values() {
        let map = RiskMap {
            cells: vec![summarise(1.0, 2.0, &[]).unwrap()],
            thresholds: [4.87, 5.3],
            mode: RiskMode::Conditional,
            repetitions: 3,
            samples: 5,
            shape: None,
        };
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,y,p,ci_lo,ci_hi,cv,t1,t2,mode,R\n1,2,NA,NA,NA,NA,4.87,5.3,conditional,3\n");
    }
}
