use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{coverage_probability, rmse};
use crate::classify::{classification_metrics, classify_mh, ClassificationReport, MembershipLabels};
use crate::coregmix::{fit, simulate_dataset, CoregMixModel, FitConfig, ParameterEstimate, Region};
use crate::distfit::{std_normal_quantile, GpdParams};
use crate::error::{Error, Result};
use crate::randomfield::MaternField;
use crate::seeds::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    A1,
    A2,
    B1,
    B2,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [ScenarioId::A1, ScenarioId::A2, ScenarioId::B1, ScenarioId::B2];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(ScenarioId::A1),
            "A2" => Ok(ScenarioId::A2),
            "B1" => Ok(ScenarioId::B1),
            "B2" => Ok(ScenarioId::B2),
            _ => Err(Error::Input(format!("unknown scenario '{s}' (A1, A2, B1 or B2)"))),
        }
    }
}

/// Generating model of a named scenario.
///
/// Letter A has weak tail coregionalisation (`lambda = 0.25`) and a light
/// first tail, B has `lambda = 0.9` and a heavy first tail; digit 1 puts a
/// quarter of the data in the tails, digit 2 a tenth.
///
/// The field variances are chosen so every component has unit variance on
/// the working scale, and each GPD threshold sits at the body's
/// `p`-quantile ignoring covariates.
pub fn scenario_model(id: ScenarioId) -> CoregMixModel {
    let p = match id {
        ScenarioId::A1 | ScenarioId::B1 => 0.75,
        ScenarioId::A2 | ScenarioId::B2 => 0.9,
    };
    let (lambda, xi1) = match id {
        ScenarioId::A1 | ScenarioId::A2 => (0.25, 0.05),
        ScenarioId::B1 | ScenarioId::B2 => (0.9, 0.5),
    };
    let (alpha_b, alpha_t) = (1.0, 0.0);
    let beta = vec![0.1, 0.25];
    let (rho1, rho2) = (10.0, 15.0);
    let tau = 100.0;
    // Covariates add 0.1^2 + 0.25^2 and the nugget 1/tau.
    let v = 1.0 - 0.1f64.powi(2) - 0.25f64.powi(2) - 1.0 / tau;
    let field = |r: f64, var: f64| MaternField::new(r, var, 1.0).expect("valid scenario field");
    let u = alpha_b + std_normal_quantile(p);
    let gpd = |xi: f64| GpdParams::new(u, 1.0, xi).expect("valid scenario tail");
    CoregMixModel {
        alpha: [alpha_b, alpha_t, alpha_b, alpha_t],
        beta: [beta.clone(), beta.clone(), beta.clone(), beta],
        lambda,
        tau: [tau, tau],
        fields: [
            field(rho1, v),
            field(rho1, v),
            field(rho2, v),
            field(rho2, v * (1.0 - lambda * lambda)),
        ],
        tails: [gpd(xi1), gpd(0.25)],
        p: [p, p],
    }
}

/// Rows of the summary table, in order.
pub const SUMMARY_PARAMETERS: [&str; 21] = [
    "alpha_B1", "alpha_T1", "alpha_B2", "alpha_T2", "beta_B1_1", "beta_B1_2", "beta_T1_1", "beta_T1_2", "beta_B2_1",
    "beta_B2_2", "beta_T2_1", "beta_T2_2", "tau_1", "tau_2", "rho_T1", "rho_T2", "lambda", "sigma_1", "sigma_2",
    "xi_1", "xi_2",
];

/// True value of every summary parameter under `model`.
pub fn true_values(model: &CoregMixModel) -> Vec<(&'static str, f64)> {
    let mut v = Vec::with_capacity(SUMMARY_PARAMETERS.len());
    for (i, name) in SUMMARY_PARAMETERS.iter().enumerate() {
        let value = match i {
            0..=3 => model.alpha[i],
            4..=11 => model.beta[(i - 4) / 2].get((i - 4) % 2).copied().unwrap_or(f64::NAN),
            12 | 13 => model.tau[i - 12],
            14 => model.fields[1].range,
            15 => model.fields[3].range,
            16 => model.lambda,
            17 | 18 => model.tails[i - 17].scale,
            _ => model.tails[i - 19].shape,
        };
        v.push((*name, value));
    }
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub model: CoregMixModel,
    pub replicates: usize,
    pub n: usize,
    pub region: Region,
    /// Votes per observation in the classifier.
    pub votes: usize,
    pub fit: FitConfig,
}

impl ScenarioSpec {
    /// Desk-scale study: 50 replicates of 500 sites on `[0, 100]^2`.
    pub fn new(id: ScenarioId) -> Self {
        Self {
            id,
            model: scenario_model(id),
            replicates: 50,
            n: 500,
            region: Region::square(100.0),
            votes: 100,
            fit: FitConfig::default(),
        }
    }

    /// 1000 replicates of 1000 sites.
    pub fn full_scale(id: ScenarioId) -> Self {
        Self {
            replicates: 1000,
            n: 1000,
            ..Self::new(id)
        }
    }

    pub fn replicate_seed(seed: u64, replicate: usize) -> u64 {
        seeds::derive(seed, &[stream::REPLICATE, replicate as u64])
    }
}

/// Everything kept from one successful replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub estimates: Vec<ParameterEstimate>,
    pub classification: [ClassificationReport; 2],
    /// Sorted observed and sorted fitted values per variable.
    pub quantiles: [Vec<(f64, f64)>; 2],
}

impl ReplicateRecord {
    fn estimate(&self, name: &str) -> Option<&ParameterEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub category: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub coverage: f64,
    pub rmse: f64,
}

/// Classifier performance for one variable, averaged over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableClassification {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub replicate: usize,
    pub variable: usize,
    pub observed: f64,
    pub fitted: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: ScenarioId,
    pub replicates: usize,
    pub n: usize,
    pub rows: Vec<SummaryRow>,
    pub classification: [VariableClassification; 2],
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

/// One replicate: simulate, classify both variables at the scenario's `p`,
/// fit, and compare against the truth.
pub fn run_replicate(spec: &ScenarioSpec, seed: u64, replicate: usize) -> Result<ReplicateRecord> {
    let rs = ScenarioSpec::replicate_seed(seed, replicate);
    let data = simulate_dataset(&spec.model, spec.n, spec.region, rs)?;
    let truth = data.truth.as_ref().expect("simulated data carry their truth");
    let mut labels: Vec<MembershipLabels> = Vec::with_capacity(2);
    let mut reports = Vec::with_capacity(2);
    for v in 0..2 {
        let l = classify_mh(
            &data.y[v],
            spec.model.p[v],
            spec.votes,
            seeds::derive(rs, &[stream::CLASSIFY, v as u64]),
        )?;
        reports.push(classification_metrics(&l.labels, &truth.membership[v])?);
        labels.push(l);
    }
    let fitted = fit(&data, [&labels[0], &labels[1]], &spec.fit)?;
    let post = fitted.row_posterior()?;
    let mut quantiles: [Vec<(f64, f64)>; 2] = Default::default();
    let mut observed: [Vec<f64>; 2] = Default::default();
    let mut fitted_vals: [Vec<f64>; 2] = Default::default();
    for (row, (mean, _)) in fitted.working.rows.iter().zip(&post) {
        let v = row.component.variable();
        observed[v].push(row.original);
        fitted_vals[v].push(fitted.working.back_transform(row.component, *mean));
    }
    for v in 0..2 {
        observed[v].sort_by(f64::total_cmp);
        fitted_vals[v].sort_by(f64::total_cmp);
        quantiles[v] = observed[v].iter().copied().zip(fitted_vals[v].iter().copied()).collect();
    }
    Ok(ReplicateRecord {
        replicate,
        seed: rs,
        estimates: fitted.parameter_estimates()?,
        classification: [reports[0], reports[1]],
        quantiles,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Simulation study for one scenario. Replicates run in parallel; failed
/// replicates are listed in the result and left out of every summary.
pub fn run_scenario(spec: &ScenarioSpec, seed: u64) -> Result<ScenarioResult> {
    if spec.replicates < 2 {
        return Err(Error::Input(format!("need at least 2 replicates, got {}", spec.replicates)));
    }
    spec.model.validate()?;
    let outcomes: Vec<Result<ReplicateRecord>> =
        (0..spec.replicates).into_par_iter().map(|r| run_replicate(spec, seed, r)).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(ReplicateFailure {
                replicate: r,
                category: e.category().to_string(),
                message: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::insufficient("successful replicates", 1, 0));
    }

    let mut rows = Vec::with_capacity(SUMMARY_PARAMETERS.len());
    for (name, truth) in true_values(&spec.model) {
        let ests: Vec<&ParameterEstimate> = records.iter().filter_map(|r| r.estimate(name)).collect();
        if ests.is_empty() {
            continue;
        }
        let mut values: Vec<f64> = ests.iter().map(|e| e.estimate).collect();
        let intervals: Vec<(f64, f64)> = ests.iter().map(|e| (e.lower, e.upper)).collect();
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let sd = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        let err = rmse(&values, truth)?;
        values.sort_by(f64::total_cmp);
        rows.push(SummaryRow {
            parameter: name.to_string(),
            truth,
            mean,
            median: median(&values),
            sd,
            coverage: coverage_probability(&intervals, truth)?,
            rmse: err,
        });
    }

    let classification = [0, 1].map(|v| VariableClassification {
        accuracy: mean_of(records.iter().map(|r| r.classification[v].accuracy)),
        precision: mean_of(records.iter().map(|r| r.classification[v].precision)),
        sensitivity: mean_of(records.iter().map(|r| r.classification[v].sensitivity)),
        specificity: mean_of(records.iter().map(|r| r.classification[v].specificity)),
    });

    Ok(ScenarioResult {
        id: spec.id,
        replicates: spec.replicates,
        n: spec.n,
        rows,
        classification,
        records,
        failures,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl ScenarioResult {
    pub fn row(&self, parameter: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    pub fn completed(&self) -> usize {
        self.records.len()
    }

    pub fn qq_rows(&self) -> impl Iterator<Item = QqRow> + '_ {
        self.records.iter().flat_map(|rec| {
            (0..2).flat_map(move |v| {
                rec.quantiles[v].iter().map(move |&(observed, fitted)| QqRow {
                    replicate: rec.replicate,
                    variable: v + 1,
                    observed,
                    fitted,
                })
            })
        })
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["parameter", "true", "mean", "median", "sd", "coverage", "rmse"])?;
        for r in &self.rows {
            out.write_record([
                r.parameter.clone(),
                r.truth.to_string(),
                r.mean.to_string(),
                r.median.to_string(),
                r.sd.to_string(),
                r.coverage.to_string(),
                r.rmse.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_qq_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "variable", "observed", "fitted"])?;
        for q in self.qq_rows() {
            out.write_record([
                q.replicate.to_string(),
                q.variable.to_string(),
                q.observed.to_string(),
                q.fitted.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_classification_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variable", "accuracy", "precision", "sensitivity", "specificity", "replicates", "failures"])?;
        for (v, c) in self.classification.iter().enumerate() {
            out.write_record([
                (v + 1).to_string(),
                fmt_opt(c.accuracy),
                fmt_opt(c.precision),
                fmt_opt(c.sensitivity),
                fmt_opt(c.specificity),
                self.completed().to_string(),
                self.failures.len().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_table() {
        // (id, p, lambda, xi1, xi2)
        let table = [
            (ScenarioId::A1, 0.75, 0.25, 0.05, 0.25),
            (ScenarioId::A2, 0.9, 0.25, 0.05, 0.25),
            (ScenarioId::B1, 0.75, 0.9, 0.5, 0.25),
            (ScenarioId::B2, 0.9, 0.9, 0.5, 0.25),
        ];
        for (id, p, lambda, xi1, xi2) in table {
            let m = scenario_model(id);
            assert_eq!(m.p, [p, p]);
            assert_eq!(m.lambda, lambda);
            assert_eq!(m.alpha, [1.0, 0.0, 1.0, 0.0]);
            for b in &m.beta {
                assert_eq!(b, &vec![0.1, 0.25]);
            }
            assert_eq!([m.fields[1].range, m.fields[3].range], [10.0, 15.0]);
            assert_eq!([m.tails[0].scale, m.tails[1].scale], [1.0, 1.0]);
            assert_eq!([m.tails[0].shape, m.tails[1].shape], [xi1, xi2]);
            m.validate().unwrap();
        }
    }

    #[test]
    fn ids_parse() {
        for id in ScenarioId::ALL {
            assert_eq!(id.to_string().parse::<ScenarioId>().unwrap(), id);
        }
        assert_eq!("b2".parse::<ScenarioId>().unwrap(), ScenarioId::B2);
        assert!("C1".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn true_values_follow_the_row_order() {
        let m = scenario_model(ScenarioId::B1);
        let t = true_values(&m);
        assert_eq!(t.len(), 21);
        let get = |n: &str| t.iter().find(|(k, _)| *k == n).unwrap().1;
        assert_eq!(get("alpha_B1"), 1.0);
        assert_eq!(get("beta_T2_2"), 0.25);
        assert_eq!(get("tau_2"), 100.0);
        assert_eq!(get("rho_T2"), 15.0);
        assert_eq!(get("lambda"), 0.9);
        assert_eq!(get("xi_1"), 0.5);
    }

    #[test]
    fn too_few_replicates() {
        let mut spec = ScenarioSpec::new(ScenarioId::A1);
        spec.replicates = 1;
        assert!(matches!(run_scenario(&spec, 1), Err(Error::Input(_))));
    }

    #[test]
    fn failures_are_counted_not_dropped() {
        // Three sites cannot support a tail fit.
        let mut spec = ScenarioSpec::new(ScenarioId::A1);
        spec.replicates = 2;
        spec.n = 3;
        assert!(matches!(run_scenario(&spec, 1), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn summary_csv_has_one_row_per_parameter() {
        let mut spec = ScenarioSpec::new(ScenarioId::A1);
        spec.replicates = 2;
        spec.n = 120;
        spec.fit.fixed_hyper = Some(crate::testutil::true_hyper(&spec.model));
        let res = run_scenario(&spec, 3).unwrap();
        let ok = res.completed();
        assert_eq!(ok + res.failures.len(), 2);
        let mut buf = Vec::new();
        res.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "parameter,true,mean,median,sd,coverage,rmse");
        assert_eq!(lines.len(), 22);
        for r in &res.rows {
            assert!([0.0, 0.5, 1.0].contains(&r.coverage), "{r:?}");
        }
        for rec in &res.records {
            for q in &rec.quantiles {
                assert!(q.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
            }
        }
    }
}
