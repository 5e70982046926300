//! Cross-validated bandwidth selection and the pilot bandwidth rule.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fe_estimator::FitOperator;
use crate::kernels::KernelSpec;
use crate::panel_data::PanelDataset;
use crate::scb_asymptotic::rate_window_warning;

/// `|1 - l_kk|` below this is treated as exact interpolation.
pub const LEVERAGE_TOL: f64 = 1e-10;

/// Candidate count of [`default_grid`].
pub const DEFAULT_GRID_STEPS: usize = 20;

/// Cross-validation scores over a bandwidth grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvCurve {
    pub grid: Vec<f64>,
    /// `None` where the fit failed at that candidate.
    pub scores: Vec<Option<f64>>,
    pub h_cv: f64,
    pub failures: Vec<usize>,
    pub warning: Option<String>,
}

/// `CV(h) = Σ_k (V̂_k / (1 - l_kk))²`.
pub fn cv_score(ds: &PanelDataset, h: f64, k: &KernelSpec) -> Result<f64> {
    let op = FitOperator::build(ds, h, k)?;
    let residuals = op.residuals(ds.y());
    let mut score = 0.0;
    for (idx, (v, l)) in residuals.iter().zip(op.leverage().iter()).enumerate() {
        let denom = 1.0 - l;
        if denom.abs() < LEVERAGE_TOL {
            return Err(Error::LeverageOne(idx));
        }
        score += (v / denom).powi(2);
    }
    Ok(score)
}

/// Scores every candidate and returns the minimiser (smallest `h` on ties).
pub fn select_bandwidth(ds: &PanelDataset, k: &KernelSpec, h_grid: &[f64]) -> Result<CvCurve> {
    if h_grid.is_empty() {
        return Err(Error::InvalidConfig("empty bandwidth grid".into()));
    }
    if h_grid.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidConfig("bandwidth candidates must be positive".into()));
    }
    if h_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("bandwidth grid must be strictly increasing".into()));
    }
    let results: Vec<Result<f64>> = h_grid.par_iter().map(|&h| cv_score(ds, h, k)).collect();
    let mut scores = Vec::with_capacity(h_grid.len());
    let mut failures = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) if s.is_finite() => {
                if best.map_or(true, |(_, b)| s < b) {
                    best = Some((i, s));
                }
                scores.push(Some(s));
            }
            _ => {
                failures.push(i);
                scores.push(None);
            }
        }
    }
    let Some((idx, _)) = best else {
        return Err(Error::AllCandidatesFailed(format!("{} candidates", h_grid.len())));
    };
    let h_cv = h_grid[idx];
    Ok(CvCurve {
        grid: h_grid.to_vec(),
        scores,
        h_cv,
        failures,
        warning: rate_window_warning(h_cv, ds.n(), ds.interval_width()),
    })
}

/// `steps` log-spaced candidates over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..steps)
                .map(|i| (a + (b - a) * i as f64 / (steps - 1) as f64).exp())
                .collect()
        }
    }
}

/// `[0.5 n^{-1/3}, 2 n^{-1/5}] (d - c)`.
pub fn default_bounds(ds: &PanelDataset) -> (f64, f64) {
    let n = ds.n() as f64;
    let width = ds.interval_width();
    (0.5 * n.powf(-1.0 / 3.0) * width, 2.0 * n.powf(-0.2) * width)
}

/// [`DEFAULT_GRID_STEPS`] log-spaced candidates over [`default_bounds`].
pub fn default_grid(ds: &PanelDataset) -> Vec<f64> {
    let (lo, hi) = default_bounds(ds);
    log_grid(lo, hi, DEFAULT_GRID_STEPS)
}

/// `h* = s_Z n^{-1/7}` with `s_Z` the sample standard deviation of `Z`.
pub fn pilot_bandwidth(ds: &PanelDataset) -> Result<f64> {
    if ds.n() < 2 {
        return Err(Error::InvalidShape("pilot bandwidth needs n >= 2".into()));
    }
    let z = ds.z();
    let len = z.len() as f64;
    let mean = z.sum() / len;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0).max(1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateCovariate);
    }
    Ok(sd * (ds.n() as f64).powf(-1.0 / 7.0))
}
