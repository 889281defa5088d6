//! A synthetic stand-in for an urban soil-geochemistry survey: two log
//! concentrations on roughly 2700 sites over a 60 km by 45 km conurbation.
//!
//! Both variables follow the body/tail mixture with clustered tail
//! membership, on a log(ppm)-like scale. A handful of planted hotspots then
//! raise both variables around randomly placed centres, so the data are not
//! an exact draw from the fitted model family.

use rand::Rng;

use crate::coregmix::{simulate_dataset_with, CoregMixModel, MembershipDesign, Region, SpatialDataset};
use crate::distfit::{std_normal_quantile, GpdParams};
use crate::error::Result;
use crate::randomfield::MaternField;
use crate::seeds;

pub const CONURBATION_SITES: usize = 2745;
pub const CONURBATION_SEED: u64 = 20_240_501;

pub const CONURBATION_REGION: Region = Region {
    x0: 0.0,
    x1: 60.0,
    y0: 0.0,
    y1: 45.0,
};

const HOTSPOTS: usize = 6;
const HOTSPOT_WIDTH: f64 = 1.5;
const HOTSPOT_HEIGHT: [f64; 2] = [0.8, 0.6];
const MEMBERSHIP_RANGE: f64 = 5.0;
/// Stream tag for hotspot placement, clear of the simulator's own tags.
const HOTSPOT_STREAM: u64 = 101;

pub fn conurbation_model() -> CoregMixModel {
    let p = [0.85, 0.9];
    let tau = 100.0;
    let lambda = 0.6;
    let beta_body = vec![0.15, 0.1];
    let beta_tail = vec![0.3, 0.1];
    let field = |r: f64, v: f64| MaternField::new(r, v, 1.0).expect("valid fixture field");
    let body_var = [0.12, 0.1];
    let fixed = beta_body.iter().map(|b| b * b).sum::<f64>() + 1.0 / tau;
    // Tail components keep unit working-scale variance.
    let t1 = 1.0 - beta_tail.iter().map(|b| b * b).sum::<f64>() - 1.0 / tau;
    let t2 = t1 * (1.0 - lambda * lambda);
    let alpha_body = [4.2, 4.6];
    let threshold = |v: usize| alpha_body[v] + std_normal_quantile(p[v]) * (body_var[v] + fixed).sqrt();
    CoregMixModel {
        alpha: [alpha_body[0], 0.0, alpha_body[1], 0.0],
        beta: [beta_body.clone(), beta_tail.clone(), beta_body, beta_tail],
        lambda,
        tau: [tau, tau],
        fields: [field(4.0, body_var[0]), field(3.0, t1), field(5.0, body_var[1]), field(4.0, t2)],
        tails: [
            GpdParams::new(threshold(0), 0.35, 0.15).expect("valid fixture tail"),
            GpdParams::new(threshold(1), 0.3, 0.1).expect("valid fixture tail"),
        ],
        p,
    }
}

pub fn synthetic_conurbation(n: usize, seed: u64) -> Result<SpatialDataset> {
    let model = conurbation_model();
    let region = CONURBATION_REGION;
    let mut data = simulate_dataset_with(
        &model,
        n,
        region,
        MembershipDesign::Clustered {
            range: MEMBERSHIP_RANGE,
        },
        seed,
    )?;
    let mut rng = seeds::rng(seed, &[HOTSPOT_STREAM]);
    let centres: Vec<(f64, f64)> = (0..HOTSPOTS)
        .map(|_| {
            (
                region.x0 + (region.x1 - region.x0) * rng.random::<f64>(),
                region.y0 + (region.y1 - region.y0) * rng.random::<f64>(),
            )
        })
        .collect();
    for s in 0..data.len() {
        let p = data.locations.get(s);
        let bump: f64 = centres
            .iter()
            .map(|(cx, cy)| (-((p.x - cx).powi(2) + (p.y - cy).powi(2)) / (2.0 * HOTSPOT_WIDTH.powi(2))).exp())
            .sum();
        for v in 0..2 {
            data.y[v][s] += HOTSPOT_HEIGHT[v] * bump;
        }
    }
    data.ids = (1..=n).map(|i| format!("S{i:04}")).collect();
    Ok(data)
}
