//! The fitted latent posterior against a brute-force dense Gaussian
//! conditional built in information form with nalgebra.

mod common;

use nalgebra::{DMatrix, DVector};

use extremix::coregmix::{log_marginal_likelihood, Hyper};
use extremix::randomfield::Point;

use common::{exp_corr, latent_discrepancy, loadings, small_fit, Oracle, TOL};

#[test]
fn latent_posterior_matches_dense_conditioning() {
    let f = small_fit(50, 21);
    assert_eq!(f.structure.field_name(3), "z_T2");
    let new_sites = [Point::new(10.0, 20.0), Point::new(55.5, 71.0), Point::new(90.0, 5.0)];
    let new_x = [vec![0.3, -1.2], vec![0.0, 0.0], vec![-0.7, 2.0]];
    let worst = latent_discrepancy(&f, &new_sites, &new_x);
    assert!(worst < TOL, "largest discrepancy {worst:e}");
}

#[test]
fn fixed_effects_match_dense_conditioning() {
    let f = small_fit(40, 5);
    let oracle = Oracle::build(&f, &[]);
    let q = oracle.q;
    for p in 0..4 {
        let (est, cov) = f.fixed_effects(p).unwrap();
        for i in 0..q {
            assert!((est[i] - oracle.mean[p * q + i]).abs() < TOL, "predictor {p} coefficient {i}");
            for k in 0..q {
                assert!((cov[i][k] - oracle.cov[(p * q + i, p * q + k)]).abs() < TOL);
            }
        }
    }
}

#[test]
fn row_posterior_matches_dense_conditioning() {
    let f = small_fit(30, 8);
    let oracle = Oracle::build(&f, &[]);
    let post = f.row_posterior().unwrap();
    for (r, row) in f.working.rows.iter().enumerate() {
        let l = oracle.predictor_map(row.site, &f.working.covariates[row.site], f.hyper.lambda);
        let p = row.component.index();
        let lp = l.row(p);
        let m = (lp * &oracle.mean)[0];
        let v = (lp * &oracle.cov * lp.transpose())[0];
        assert!((post[r].0 - m).abs() < TOL, "row {r} mean");
        assert!((post[r].1 - v).abs() < TOL, "row {r} variance");
    }
}

/// Restricted likelihood with every row stacked into one dense covariance,
/// including the cross-covariance that the shared field induces.
#[test]
fn restricted_likelihood_matches_dense_formula() {
    let f = small_fit(30, 8);
    let h: &Hyper = &f.hyper;
    let q = 1 + f.working.n_covariates();
    let total = log_marginal_likelihood(&f.structure, h, &f.working).unwrap();
    let all = &f.working.rows;
    let nr = all.len();
    let range = [h.ranges[0], h.ranges[0], h.ranges[1], h.ranges[1]];
    let load = loadings(h.lambda);
    let kf = DMatrix::from_fn(nr, nr, |i, j| {
        let (ri, rj) = (&all[i], &all[j]);
        let (pi, pj) = (ri.component.index(), rj.component.index());
        let mut c = 0.0;
        for &(fa, wa) in &load[pi] {
            for &(fb, wb) in &load[pj] {
                if fa == fb {
                    c += wa
                        * wb
                        * h.variances[fa]
                        * exp_corr(f.working.locations.get(ri.site), f.working.locations.get(rj.site), range[fa]);
                }
            }
        }
        if i == j {
            c += 1.0 / h.tau[ri.component.variable()];
        }
        c
    });
    let xf = DMatrix::from_fn(nr, 4 * q, |i, j| {
        let r = &all[i];
        let p = r.component.index();
        if j / q != p {
            0.0
        } else if j % q == 0 {
            1.0
        } else {
            f.working.covariates[r.site][j % q - 1]
        }
    });
    let yf = DVector::from_iterator(nr, all.iter().map(|r| r.value));
    let kfi = kf.clone().try_inverse().unwrap();
    let af = xf.transpose() * &kfi * &xf;
    let afi = af.clone().try_inverse().unwrap();
    let pf = &kfi - &kfi * &xf * &afi * xf.transpose() * &kfi;
    let expected = -0.5
        * ((nr - 4 * q) as f64 * (2.0 * std::f64::consts::PI).ln()
            + kf.determinant().ln()
            + af.determinant().ln()
            + (yf.transpose() * &pf * &yf)[0]);
    assert!((total - expected).abs() < 1e-8 * expected.abs().max(1.0), "{total} vs {expected}");

    // Under flat priors the fixed-effect posterior is generalised least squares.
    let gls = &afi * xf.transpose() * &kfi * &yf;
    for p in 0..4 {
        let (est, cov) = f.fixed_effects(p).unwrap();
        for i in 0..q {
            assert!((est[i] - gls[p * q + i]).abs() < 1e-8, "GLS predictor {p} coefficient {i}");
            for k in 0..q {
                assert!((cov[i][k] - afi[(p * q + i, p * q + k)]).abs() < 1e-8);
            }
        }
    }
}
