//! Local polynomial machinery: kernel windows, equivalent-weight rows of the
//! local-linear smoother, the stacked smoothing matrix `M`, and a local-cubic
//! second-derivative estimator.
//!
//! All local fits are computed in the scaled coordinate `u = (Z - z)/h`, which
//! leaves the level row unchanged and keeps the Gram matrices well conditioned
//! for small bandwidths.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::panel_data::PanelDataset;

/// Relative determinant / pivot threshold for the local Gram solves.
pub const LOCAL_SINGULARITY_TOL: f64 = 1e-12;

/// Local design `Z_z` (rows `(1, Z_k - z)`) and kernel weights `K_h(Z_k - z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDesign {
    pub design: DMatrix<f64>,
    pub weights: DVector<f64>,
}

pub fn local_design(z: f64, ds: &PanelDataset, h: f64, k: &KernelSpec) -> Result<LocalDesign> {
    check_bandwidth(h)?;
    let zs = ds.z().as_slice();
    let weights = DVector::from_iterator(zs.len(), zs.iter().map(|&zk| k.eval((zk - z) / h) / h));
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::EmptyWindow { z });
    }
    let design = DMatrix::from_fn(zs.len(), 2, |r, c| if c == 0 { 1.0 } else { zs[r] - z });
    Ok(LocalDesign { design, weights })
}

/// The two rows of `M(z) = (Z_zᵀ W_z Z_z)⁻¹ Z_zᵀ W_z`.
///
/// `level · y` is the local-linear fit at `z`; `slope · y` is the fitted
/// derivative in the natural units of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherRow {
    pub level: Vec<f64>,
    pub slope: Vec<f64>,
}

pub fn smoother_row(z: f64, ds: &PanelDataset, h: f64, k: &KernelSpec) -> Result<SmootherRow> {
    check_bandwidth(h)?;
    smoother_row_on(z, ds.z().as_slice(), h, k)
}

pub(crate) fn smoother_row_on(z: f64, zs: &[f64], h: f64, k: &KernelSpec) -> Result<SmootherRow> {
    let mut weights = Vec::with_capacity(zs.len());
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut active = 0usize;
    for &zk in zs {
        let u = (zk - z) / h;
        let w = k.eval(u) / h;
        if w != 0.0 {
            active += 1;
            s0 += w;
            s1 += w * u;
            s2 += w * u * u;
        }
        weights.push(w);
    }
    if active == 0 {
        return Err(Error::EmptyWindow { z });
    }
    let det = s0 * s2 - s1 * s1;
    if active < 2 || !(det > LOCAL_SINGULARITY_TOL * s0 * s2) {
        return Err(Error::SingularLocalFit(format!(
            "local-linear Gram matrix at z = {z} (h = {h}, {active} points in window)"
        )));
    }
    let mut level = Vec::with_capacity(zs.len());
    let mut slope = Vec::with_capacity(zs.len());
    for (&zk, &w) in zs.iter().zip(&weights) {
        if w == 0.0 {
            level.push(0.0);
            slope.push(0.0);
        } else {
            let u = (zk - z) / h;
            level.push(w * (s2 - s1 * u) / det);
            slope.push(w * (s0 * u - s1) / (det * h));
        }
    }
    Ok(SmootherRow { level, slope })
}

/// The `nT x nT` local-linear smoothing matrix evaluated at the sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherMatrix {
    m: DMatrix<f64>,
    h: f64,
}

impl SmootherMatrix {
    pub(crate) fn from_parts(m: DMatrix<f64>, h: f64) -> Self {
        Self { m, h }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }
}

pub fn smoothing_matrix(ds: &PanelDataset, h: f64, k: &KernelSpec) -> Result<SmootherMatrix> {
    check_bandwidth(h)?;
    let zs = ds.z().as_slice();
    let rows: Vec<Vec<f64>> = zs
        .par_iter()
        .enumerate()
        .map(|(row, &zk)| {
            smoother_row_on(zk, zs, h, k).map(|r| r.level).map_err(|e| match e {
                Error::SingularLocalFit(msg) => Error::SingularLocalFit(format!("row {row}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let n = zs.len();
    let m = DMatrix::from_fn(n, n, |r, c| rows[r][c]);
    Ok(SmootherMatrix { m, h })
}

/// Local-cubic estimate of `g''(z)` from `targets` at pilot bandwidth `h_star`.
pub fn local_cubic_d2(
    targets: &[f64],
    ds: &PanelDataset,
    h_star: f64,
    k: &KernelSpec,
    z: f64,
) -> Result<f64> {
    check_bandwidth(h_star)?;
    if targets.len() != ds.n_obs() {
        return Err(Error::LengthMismatch { expected: ds.n_obs(), got: targets.len() });
    }
    local_cubic_d2_on(targets, ds.z().as_slice(), h_star, k, z)
}

pub(crate) fn local_cubic_d2_on(
    targets: &[f64],
    zs: &[f64],
    h: f64,
    k: &KernelSpec,
    z: f64,
) -> Result<f64> {
    let mut gram = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    let mut in_window: Vec<f64> = Vec::new();
    for (&zk, &yk) in zs.iter().zip(targets) {
        let u = (zk - z) / h;
        let w = k.eval(u);
        if w == 0.0 {
            continue;
        }
        in_window.push(zk);
        let powers = [1.0, u, u * u, u * u * u];
        for a in 0..4 {
            rhs[a] += w * powers[a] * yk;
            for b in a..4 {
                gram[(a, b)] += w * powers[a] * powers[b];
            }
        }
    }
    if in_window.is_empty() {
        return Err(Error::EmptyWindow { z });
    }
    in_window.sort_by(f64::total_cmp);
    in_window.dedup();
    if in_window.len() < 4 {
        return Err(Error::SingularLocalFit(format!(
            "local cubic at z = {z} has {} distinct points in window (h* = {h})",
            in_window.len()
        )));
    }
    for a in 0..4 {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let coef = solve_spd4(&gram, &rhs).ok_or_else(|| {
        Error::SingularLocalFit(format!("local-cubic Gram matrix at z = {z} (h* = {h})"))
    })?;
    Ok(2.0 * coef[2] / (h * h))
}

/// Cholesky solve with a relative pivot guard; `None` when the matrix is
/// numerically singular.
fn solve_spd4(a: &Matrix4<f64>, b: &Vector4<f64>) -> Option<Vector4<f64>> {
    let scale = a.trace();
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    if (0..4).any(|i| l[(i, i)] * l[(i, i)] <= LOCAL_SINGULARITY_TOL * scale) {
        return None;
    }
    Some(chol.solve(b))
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveBandwidth(h))
    }
}
