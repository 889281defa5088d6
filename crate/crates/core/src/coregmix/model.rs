use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classify::{Membership, MembershipLabels};
use crate::distfit::{gaussian_to_tail, std_normal_quantile, GpdParams};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::randomfield::{correlation_matrix, draw_from_factor, Locations, MaternField, Point};
use crate::seeds::{self, stream};

/// The four mixture components; each has its own linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    B1,
    T1,
    B2,
    T2,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::B1, Component::T1, Component::B2, Component::T2];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Response variable (0 or 1) the component belongs to.
    pub fn variable(self) -> usize {
        match self {
            Component::B1 | Component::T1 => 0,
            Component::B2 | Component::T2 => 1,
        }
    }

    pub fn is_tail(self) -> bool {
        matches!(self, Component::T1 | Component::T2)
    }

    pub fn of(variable: usize, membership: Membership) -> Self {
        match (variable, membership) {
            (0, Membership::Body) => Component::B1,
            (0, Membership::Tail) => Component::T1,
            (_, Membership::Body) => Component::B2,
            (_, Membership::Tail) => Component::T2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::B1 => "B1",
            Component::T1 => "T1",
            Component::B2 => "B2",
            Component::T2 => "T2",
        }
    }
}

/// Full parameter set of the bivariate mixture. Arrays indexed by
/// [`Component::index`] run B1, T1, B2, T2; arrays of two are per variable.
///
/// Latent fields: `fields[B1]` and `fields[B2]` drive the bodies,
/// `fields[T1]` drives variable 1's tail and enters variable 2's tail with
/// weight `lambda`, alongside `fields[T2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoregMixModel {
    pub alpha: [f64; 4],
    pub beta: [Vec<f64>; 4],
    pub lambda: f64,
    /// Observation noise precisions.
    pub tau: [f64; 2],
    pub fields: [MaternField; 4],
    pub tails: [GpdParams; 2],
    /// Body probabilities.
    pub p: [f64; 2],
}

impl CoregMixModel {
    pub fn validate(&self) -> Result<()> {
        for t in self.tau {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Domain(format!("noise precision must be positive, got {t}")));
            }
        }
        for p in self.p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Domain(format!("body probability must lie in (0, 1], got {p}")));
            }
        }
        let j = self.beta[0].len();
        if self.beta.iter().any(|b| b.len() != j) {
            return Err(Error::Input("covariate coefficient vectors differ in length".into()));
        }
        for f in &self.fields {
            MaternField::new(f.range, f.variance, f.smoothness)?;
        }
        for t in &self.tails {
            GpdParams::new(t.threshold, t.scale, t.shape)?;
        }
        if !self.lambda.is_finite() || self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("non-finite intercept or lambda".into()));
        }
        Ok(())
    }

    pub fn n_covariates(&self) -> usize {
        self.beta[0].len()
    }

    /// Marginal variance of the working-scale response of a component at a
    /// site with iid standard normal covariates.
    pub fn working_variance(&self, c: Component) -> f64 {
        let i = c.index();
        let mut v = self.fields[i].variance
            + self.beta[i].iter().map(|b| b * b).sum::<f64>()
            + 1.0 / self.tau[c.variable()];
        if c == Component::T2 {
            v += self.lambda * self.lambda * self.fields[Component::T1.index()].variance;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Region {
    pub fn square(side: f64) -> Self {
        Self {
            x0: 0.0,
            x1: side,
            y0: 0.0,
            y1: side,
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }
}

/// How body/tail membership is drawn in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MembershipDesign {
    /// Independent Bernoulli draws at every site.
    Independent,
    /// Tail where a unit-variance Matérn field with this range exceeds its
    /// `p`-quantile, so tail sites cluster in space.
    Clustered { range: f64 },
}

/// Generating values kept alongside a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub model: CoregMixModel,
    /// Latent field values at the sites, indexed like the model's fields.
    pub latent: [Vec<f64>; 4],
    pub membership: [Vec<Membership>; 2],
}

impl TruthRecord {
    pub fn labels(&self, variable: usize) -> MembershipLabels {
        MembershipLabels::from_labels(
            self.membership[variable].clone(),
            self.model.p[variable],
            self.model.tails[variable].threshold,
        )
    }
}

/// Two co-located responses with shared covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDataset {
    pub ids: Vec<String>,
    pub locations: Locations,
    pub y: [Vec<f64>; 2],
    /// Row-major, one row of covariates per site.
    pub covariates: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
    pub labels: [Option<MembershipLabels>; 2],
    pub truth: Option<TruthRecord>,
}

impl SpatialDataset {
    pub fn new(
        ids: Vec<String>,
        locations: Locations,
        y: [Vec<f64>; 2],
        covariates: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = locations.len();
        if ids.len() != n || y[0].len() != n || y[1].len() != n || covariates.len() != n {
            return Err(Error::Input(format!(
                "row counts differ: {} ids, {n} sites, {} + {} responses, {} covariate rows",
                ids.len(),
                y[0].len(),
                y[1].len(),
                covariates.len()
            )));
        }
        let j = covariate_names.len();
        if let Some(r) = covariates.iter().position(|row| row.len() != j) {
            return Err(Error::Input(format!("covariate row {r} has the wrong length")));
        }
        if covariates.iter().flatten().chain(y[0].iter()).chain(y[1].iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("responses and covariates must be finite".into()));
        }
        Ok(Self {
            ids,
            locations,
            y,
            covariates,
            covariate_names,
            labels: [None, None],
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> SpatialDataset {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        SpatialDataset {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            locations: self.locations.subset(idx),
            y: [pick(&self.y[0]), pick(&self.y[1])],
            covariates: idx.iter().map(|&i| self.covariates[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            labels: [
                self.labels[0].as_ref().map(|l| l.subset(idx)),
                self.labels[1].as_ref().map(|l| l.subset(idx)),
            ],
            truth: self.truth.as_ref().map(|t| TruthRecord {
                model: t.model.clone(),
                latent: [pick(&t.latent[0]), pick(&t.latent[1]), pick(&t.latent[2]), pick(&t.latent[3])],
                membership: [
                    idx.iter().map(|&i| t.membership[0][i]).collect(),
                    idx.iter().map(|&i| t.membership[1][i]).collect(),
                ],
            }),
        }
    }
}

pub fn simulate_dataset(model: &CoregMixModel, n: usize, region: Region, seed: u64) -> Result<SpatialDataset> {
    simulate_dataset_with(model, n, region, MembershipDesign::Independent, seed)
}

/// Forward simulation of the mixture on `n` uniform random sites.
pub fn simulate_dataset_with(
    model: &CoregMixModel,
    n: usize,
    region: Region,
    design: MembershipDesign,
    seed: u64,
) -> Result<SpatialDataset> {
    model.validate()?;
    if n == 0 {
        return Err(Error::Input("cannot simulate an empty dataset".into()));
    }
    if !(region.x1 > region.x0 && region.y1 > region.y0) {
        return Err(Error::Input(format!("degenerate region {region:?}")));
    }
    let mut rng = seeds::rng(seed, &[stream::LOCATIONS]);
    let points: Vec<Point> = (0..n)
        .map(|_| {
            Point::new(
                region.x0 + (region.x1 - region.x0) * rng.random::<f64>(),
                region.y0 + (region.y1 - region.y0) * rng.random::<f64>(),
            )
        })
        .collect();
    let locations = Locations::new(points)?;

    let j = model.n_covariates();
    let mut rng = seeds::rng(seed, &[stream::COVARIATES]);
    let covariates: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..j).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    // One correlation factor per distinct (range, smoothness); fields differ
    // only in scale.
    let mut factors: Vec<((f64, f64), Cholesky)> = Vec::new();
    let mut latent: [Vec<f64>; 4] = Default::default();
    for (k, field) in model.fields.iter().enumerate() {
        let key = (field.range, field.smoothness);
        if !factors.iter().any(|(kk, _)| *kk == key) {
            let corr = correlation_matrix(field.smoothness, field.range, &locations);
            factors.push((key, Cholesky::factor_jittered(&corr, 1.0)?));
        }
        let chol = &factors.iter().find(|(kk, _)| *kk == key).expect("factor cached").1;
        let mut rng = seeds::rng(seed, &[stream::FIELDS, k as u64]);
        let sd = field.variance.sqrt();
        latent[k] = draw_from_factor(chol, &mut rng).into_iter().map(|v| sd * v).collect();
    }

    let mut membership: [Vec<Membership>; 2] = Default::default();
    for var in 0..2 {
        let p = model.p[var];
        let mut rng = seeds::rng(seed, &[stream::MEMBERSHIP, var as u64]);
        membership[var] = match design {
            MembershipDesign::Independent => (0..n)
                .map(|_| if rng.random::<f64>() < p { Membership::Body } else { Membership::Tail })
                .collect(),
            MembershipDesign::Clustered { range } => {
                let field = MaternField::new(range, 1.0, 1.0)?;
                let chol = Cholesky::factor_jittered(&field.covariance_matrix(&locations), 1.0)?;
                let g = draw_from_factor(&chol, &mut rng);
                let cut = if p >= 1.0 { f64::INFINITY } else { std_normal_quantile(p) };
                g.into_iter()
                    .map(|v| if v > cut { Membership::Tail } else { Membership::Body })
                    .collect()
            }
        };
    }

    let mut y: [Vec<f64>; 2] = Default::default();
    for var in 0..2 {
        let mut rng = seeds::rng(seed, &[stream::NOISE, var as u64]);
        let noise_sd = 1.0 / model.tau[var].sqrt();
        y[var] = (0..n)
            .map(|s| {
                let c = Component::of(var, membership[var][s]);
                let eta = linear_predictor(model, c, &covariates[s], &latent, s);
                let eps: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
                if c.is_tail() {
                    gaussian_to_tail(&model.tails[var], eta + eps)
                } else {
                    eta + eps
                }
            })
            .collect();
    }

    let mut data = SpatialDataset::new(
        (1..=n).map(|i| i.to_string()).collect(),
        locations,
        y,
        covariates,
        (1..=j).map(|k| format!("cov_{k}")).collect(),
    )?;
    data.truth = Some(TruthRecord {
        model: model.clone(),
        latent,
        membership,
    });
    Ok(data)
}

/// Working-scale linear predictor of component `c` at site `s`.
pub fn linear_predictor(model: &CoregMixModel, c: Component, x: &[f64], latent: &[Vec<f64>; 4], s: usize) -> f64 {
    let i = c.index();
    let mut eta = model.alpha[i] + model.beta[i].iter().zip(x).map(|(b, x)| b * x).sum::<f64>() + latent[i][s];
    if c == Component::T2 {
        eta += model.lambda * latent[Component::T1.index()][s];
    }
    eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::a1_like;

    #[test]
    fn working_variances_are_unit() {
        let m = a1_like(0.75, 0.25);
        for c in Component::ALL {
            assert!((m.working_variance(c) - 1.0).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn tail_counts_match_bernoulli() {
        let m = a1_like(0.75, 0.25);
        let d = simulate_dataset(&m, 1000, Region::square(100.0), 3).unwrap();
        let t = d.truth.as_ref().unwrap();
        let sd = 3.0 * (1000.0f64 * 0.75 * 0.25).sqrt();
        for var in 0..2 {
            let tails = t.membership[var].iter().filter(|m| m.is_tail()).count() as f64;
            assert!((tails - 250.0).abs() <= sd, "{tails}");
            for (y, mem) in d.y[var].iter().zip(&t.membership[var]) {
                if mem.is_tail() {
                    assert!(*y >= m.tails[var].threshold);
                }
            }
        }
    }

    #[test]
    fn body_only_when_p_is_one() {
        let m = a1_like(1.0, 0.25);
        let d = simulate_dataset(&m, 200, Region::square(100.0), 4).unwrap();
        let t = d.truth.unwrap();
        assert!(t.membership.iter().flatten().all(|m| !m.is_tail()));
    }

    #[test]
    fn clustered_membership_has_target_rate() {
        let m = a1_like(0.9, 0.25);
        let d = simulate_dataset_with(&m, 600, Region::square(100.0), MembershipDesign::Clustered { range: 15.0 }, 5)
            .unwrap();
        let tails = d.truth.unwrap().membership[0].iter().filter(|m| m.is_tail()).count();
        assert!((20..=150).contains(&tails), "{tails}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = a1_like(0.75, 0.9);
        let a = simulate_dataset(&m, 100, Region::square(100.0), 11).unwrap();
        let b = simulate_dataset(&m, 100, Region::square(100.0), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_model_rejected() {
        let mut m = a1_like(0.75, 0.25);
        m.tau[0] = 0.0;
        assert!(simulate_dataset(&m, 10, Region::square(1.0), 0).is_err());
        let mut m = a1_like(0.75, 0.25);
        m.beta[2] = vec![0.1];
        assert!(m.validate().is_err());
    }
}
