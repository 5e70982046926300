mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use panel_scb::fe_estimator::{fit_on_grid, uniform_grid};
use panel_scb::local_poly::{local_cubic_d2, smoother_row, smoothing_matrix};
use panel_scb::panel_data::build_dummy_matrix;
use panel_scb::scb_asymptotic::{asymptotic_band, derivative_band};
use panel_scb::{epanechnikov, fit, uniform, PanelDataset};

const TOL: f64 = 1e-8;

fn panels() -> Vec<PanelDataset> {
    vec![random_panel(5, 4, 2, 1), random_panel(8, 3, 1, 2), random_panel(12, 5, 3, 3), random_panel(6, 6, 0, 4)]
}

fn max_entry(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

#[test]
fn q1_annihilates_the_dummy_matrix() {
    let k = epanechnikov();
    for ds in panels() {
        let fr = fit(&ds, 0.4, &k).unwrap();
        let ps = fr.projections(&ds).unwrap();
        let d = build_dummy_matrix(ds.n(), ds.t_len()).unwrap();
        assert!(max_entry(&(&ps.q1 * &d)) <= TOL);
    }
}

#[test]
fn q1_and_q2_are_idempotent() {
    let k = epanechnikov();
    for ds in panels() {
        let fr = fit(&ds, 0.4, &k).unwrap();
        let ps = fr.projections(&ds).unwrap();
        assert!(max_entry(&(&ps.q1 * &ps.q1 - &ps.q1)) <= TOL);
        assert!(max_entry(&(&ps.q2 * &ps.q2 - &ps.q2)) <= TOL);
        assert!(max_entry(&(&ps.q_tilde * &ps.q_tilde - &ps.q_tilde)) <= TOL);
    }
}

#[test]
fn projection_set_matches_its_definitions() {
    let k = epanechnikov();
    let ds = random_panel(6, 4, 2, 9);
    let fr = fit(&ds, 0.35, &k).unwrap();
    let ps = fr.projections(&ds).unwrap();
    assert!(max_entry(&(&ps.m - brute_smoother(&ds, 0.35, &k))) <= TOL);
    let n_obs = ds.n_obs();
    let r = DMatrix::<f64>::identity(n_obs, n_obs) - &ps.m;
    assert!(max_entry(&(&ps.p - r.transpose() * &r)) <= TOL);
    let v = &r * &ps.q1 * &ps.q2 * ds.y();
    assert!(max_abs_diff(v.as_slice(), fr.residuals.as_slice()) <= TOL);
    let lev = fr.operator().leverage();
    assert!(max_abs_diff(lev.as_slice(), ps.hat_diag.as_slice()) <= TOL);
}

#[test]
fn local_linear_reproduces_lines() {
    for k in [epanechnikov(), uniform()] {
        for ds in panels() {
            let line = ds.z().map(|z| 1.7 - 2.3 * z);
            let sm = smoothing_matrix(&ds, 0.3, &k).unwrap();
            let fitted = sm.matrix() * &line;
            assert!(max_abs_diff(fitted.as_slice(), line.as_slice()) <= TOL);
            for z in uniform_grid(0.0, 1.0, 11) {
                let row = smoother_row(z, &ds, 0.3, &k).unwrap();
                let level: f64 = row.level.iter().zip(line.iter()).map(|(a, b)| a * b).sum();
                let slope: f64 = row.slope.iter().zip(line.iter()).map(|(a, b)| a * b).sum();
                assert!((level - (1.7 - 2.3 * z)).abs() <= TOL);
                assert!((slope + 2.3).abs() <= TOL);
            }
        }
    }
}

#[test]
fn local_cubic_reproduces_cubics() {
    let k = epanechnikov();
    let ds = random_panel(15, 4, 0, 5);
    let (a, b, c, d) = (0.3, -1.1, 2.5, -4.0);
    let cubic: Vec<f64> = ds.z().iter().map(|&z| a + b * z + c * z * z + d * z * z * z).collect();
    for z in uniform_grid(0.0, 1.0, 9) {
        let d2 = local_cubic_d2(&cubic, &ds, 0.5, &k, z).unwrap();
        assert!((d2 - (2.0 * c + 6.0 * d * z)).abs() <= TOL, "z = {z}: {d2}");
    }
}

#[test]
fn fixed_effects_leave_estimates_unchanged() {
    let k = epanechnikov();
    for (seed, ds) in panels().into_iter().enumerate() {
        let shifted = ds.with_response(ds.y() + random_effects(ds.n(), ds.t_len(), seed as u64)).unwrap();
        let a = fit(&ds, 0.4, &k).unwrap();
        let b = fit(&shifted, 0.4, &k).unwrap();
        assert!(max_abs_diff(a.beta_hat.as_slice(), b.beta_hat.as_slice()) <= TOL);
        assert!(max_abs_diff(&a.g_grid.level, &b.g_grid.level) <= TOL);
        assert!(max_abs_diff(&a.g_grid.slope, &b.g_grid.slope) <= TOL);
        assert!(max_abs_diff(a.residuals.as_slice(), b.residuals.as_slice()) <= TOL);
    }
}

#[test]
fn estimates_are_linear_in_the_response() {
    let k = epanechnikov();
    for (seed, ds) in panels().into_iter().enumerate() {
        let y1 = random_vector(ds.n_obs(), 100 + seed as u64);
        let y2 = random_vector(ds.n_obs(), 200 + seed as u64);
        let (s1, s2) = (1.75, -0.4);
        let combo: DVector<f64> = &y1 * s1 + &y2 * s2;
        let f = |y: &DVector<f64>| fit(&ds.with_response(y.clone()).unwrap(), 0.4, &k).unwrap();
        let (a, b, c) = (f(&y1), f(&y2), f(&combo));
        let mix = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| s1 * p + s2 * q).collect::<Vec<_>>();
        // Machine precision, scaled by the size of the inputs.
        let eps = 1e-12;
        assert!(max_rel_diff(c.beta_hat.as_slice(), &mix(a.beta_hat.as_slice(), b.beta_hat.as_slice())) <= eps);
        assert!(max_rel_diff(c.alpha_hat.as_slice(), &mix(a.alpha_hat.as_slice(), b.alpha_hat.as_slice())) <= eps);
        assert!(max_rel_diff(&c.g_grid.level, &mix(&a.g_grid.level, &b.g_grid.level)) <= eps);
        assert!(max_rel_diff(&c.g_grid.slope, &mix(&a.g_grid.slope, &b.g_grid.slope)) <= 1e-11);
        assert!(max_rel_diff(c.residuals.as_slice(), &mix(a.residuals.as_slice(), b.residuals.as_slice())) <= eps);
        assert!(max_rel_diff(c.fitted.as_slice(), &mix(a.fitted.as_slice(), b.fitted.as_slice())) <= eps);
    }
}

#[test]
fn affine_rescaling_of_the_interval_leaves_bands_unchanged() {
    let k = epanechnikov();
    let ds = random_panel(40, 4, 2, 21);
    let (shift, scale) = (3.0, 5.0);
    let moved = PanelDataset::new(
        ds.n(),
        ds.t_len(),
        ds.y().clone(),
        ds.x().clone(),
        ds.z().map(|z| shift + scale * z),
        Some((shift, shift + scale)),
    )
    .unwrap();
    let grid = uniform_grid(0.05, 0.95, 13);
    let moved_grid: Vec<f64> = grid.iter().map(|z| shift + scale * z).collect();
    let (h, h_star) = (0.25, 0.6);
    let a = fit_on_grid(&ds, h, &k, &grid).unwrap();
    let b = fit_on_grid(&moved, scale * h, &k, &moved_grid).unwrap();
    assert!(max_abs_diff(a.beta_hat.as_slice(), b.beta_hat.as_slice()) <= TOL);
    assert!(max_abs_diff(&a.g_grid.level, &b.g_grid.level) <= TOL);
    let slope_back: Vec<f64> = b.g_grid.slope.iter().map(|s| s * scale).collect();
    assert!(max_abs_diff(&a.g_grid.slope, &slope_back) <= TOL);

    let ba = asymptotic_band(&a, &ds, &grid, 0.05, Some(h_star)).unwrap();
    let bb = asymptotic_band(&b, &moved, &moved_grid, 0.05, Some(scale * h_star)).unwrap();
    assert!((ba.critical - bb.critical).abs() <= 1e-12);
    assert!(max_abs_diff(&ba.center, &bb.center) <= TOL);
    assert!(max_abs_diff(&ba.lower, &bb.lower) <= TOL);
    assert!(max_abs_diff(&ba.upper, &bb.upper) <= TOL);

    let da = derivative_band(&a, &ds, &grid, 0.05).unwrap();
    let db = derivative_band(&b, &moved, &moved_grid, 0.05).unwrap();
    assert!((da.critical - db.critical).abs() <= 1e-12);
    let hw_back: Vec<f64> = db.half_width().iter().map(|w| w * scale).collect();
    assert!(max_abs_diff(&da.half_width(), &hw_back) <= TOL);
}

#[test]
fn saturated_fit_is_refused() {
    // Two units, two periods, two regressors: nothing left for the residuals.
    let ds = random_panel(2, 2, 2, 8);
    let err = fit(&ds, 0.9, &epanechnikov()).unwrap_err();
    assert!(matches!(err, panel_scb::Error::DegenerateVariance(_) | panel_scb::Error::SingularProjection(_)), "{err}");
}
