//! Random panels and brute-force reference implementations shared by the
//! integration tests. Everything here is built from textbook definitions with
//! dense matrices, independent of the factored code paths in the crate.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use panel_scb::panel_data::build_dummy_matrix;
use panel_scb::rng::stream;
use panel_scb::{KernelSpec, PanelDataset};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Balanced panel with `z` stratified over `[0, 1]` (one draw per cell of a
/// shuffled partition) so every window of half-width 0.5 holds several points.
pub fn random_panel(n: usize, t_len: usize, p: usize, seed: u64) -> PanelDataset {
    let rows = n * t_len;
    let mut rng = stream(seed, 7);
    let mut cells: Vec<usize> = (0..rows).collect();
    cells.shuffle(&mut rng);
    let z = DVector::from_iterator(rows, cells.iter().map(|&c| (c as f64 + rng.random::<f64>()) / rows as f64));
    let x = DMatrix::from_fn(rows, p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let y = DVector::from_fn(rows, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    PanelDataset::new(n, t_len, y, x, z, Some((0.0, 1.0))).unwrap()
}

/// Every small shape with `8 ≤ nT ≤ 30`, cycling through `p = 0, 1, 2`.
pub fn small_instances() -> Vec<PanelDataset> {
    let mut out = Vec::new();
    let mut seed = 0u64;
    for n in 2..=10 {
        for t in 2..=6 {
            if n * t < 8 || n * t > 30 {
                continue;
            }
            for p in 0..=2 {
                seed += 1;
                out.push(random_panel(n, t, p, seed));
            }
        }
    }
    out
}

pub fn random_vector(len: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, 11);
    DVector::from_fn(len, |_, _| -> f64 { StandardNormal.sample(&mut rng) })
}

/// Effects summing to zero, stacked to length `nT`.
pub fn random_effects(n: usize, t_len: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, 13);
    let mut a: Vec<f64> = (0..n).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); 3.0 * e }).collect();
    let mean = a.iter().sum::<f64>() / n as f64;
    a.iter_mut().for_each(|v| *v -= mean);
    DVector::from_fn(n * t_len, |k, _| a[k / t_len])
}

/// `e₁ᵀ (Z_zᵀ W_z Z_z)⁻¹ Z_zᵀ W_z` by explicit inversion.
pub fn brute_row(z: f64, zs: &[f64], h: f64, k: &KernelSpec, degree: usize) -> DVector<f64> {
    let cols = degree + 1;
    let design = DMatrix::from_fn(zs.len(), cols, |r, c| (zs[r] - z).powi(c as i32));
    let w = DMatrix::from_diagonal(&DVector::from_iterator(zs.len(), zs.iter().map(|&zk| k.eval((zk - z) / h) / h)));
    let gram = design.transpose() * &w * &design;
    let inv = gram.try_inverse().expect("local Gram matrix invertible");
    let full = inv * design.transpose() * w;
    full.row(0).transpose()
}

/// Smoothing matrix with row `k` the local-linear fit at `Z_k`.
pub fn brute_smoother(ds: &PanelDataset, h: f64, k: &KernelSpec) -> DMatrix<f64> {
    let zs = ds.z().as_slice();
    let n_obs = zs.len();
    let mut m = DMatrix::zeros(n_obs, n_obs);
    for r in 0..n_obs {
        m.row_mut(r).copy_from(&brute_row(zs[r], zs, h, k, 1).transpose());
    }
    m
}

pub struct BruteFit {
    pub beta: DVector<f64>,
    /// All `n` effects, the first equal to minus the sum of the rest.
    pub alpha: DVector<f64>,
    pub residuals: DVector<f64>,
}

/// Minimises `‖(I - M)(Y - Xβ - Dα)‖²` jointly over `(β, α)` by SVD least
/// squares of `(I - M)Y` on `[(I - M)X, (I - M)D]`.
pub fn brute_fit(ds: &PanelDataset, y: &DVector<f64>, h: f64, k: &KernelSpec) -> BruteFit {
    let n_obs = ds.n_obs();
    let r = DMatrix::<f64>::identity(n_obs, n_obs) - brute_smoother(ds, h, k);
    let d = build_dummy_matrix(ds.n(), ds.t_len()).unwrap();
    let p = ds.p();
    let mut design = DMatrix::zeros(n_obs, p + d.ncols());
    design.columns_mut(0, p).copy_from(ds.x());
    design.columns_mut(p, d.ncols()).copy_from(&d);
    let rd = &r * &design;
    let ry = &r * y;
    let coef = rd.clone().svd(true, true).solve(&ry, 1e-14).unwrap();
    let beta = coef.rows(0, p).into_owned();
    let free = coef.rows(p, d.ncols()).into_owned();
    let mut alpha = vec![-free.sum()];
    alpha.extend(free.iter());
    BruteFit { beta, alpha: DVector::from_vec(alpha), residuals: ry - rd * coef }
}

impl BruteFit {
    /// `ĝ(z) = m(z)ᵀ (Y - Xβ̂ - Dα̂)`.
    pub fn g_at(&self, ds: &PanelDataset, y: &DVector<f64>, z: f64, h: f64, k: &KernelSpec) -> f64 {
        let t = ds.t_len();
        let mut target = y - ds.x() * &self.beta;
        for (kk, v) in target.iter_mut().enumerate() {
            *v -= self.alpha[kk / t];
        }
        brute_row(z, ds.z().as_slice(), h, k, 1).dot(&target)
    }
}

/// `Σ_k (V̂_k / (1 - l_kk))²` with `L = I - (I - M)Q₁Q₂` assembled from its
/// definition.
pub fn brute_cv(ds: &PanelDataset, h: f64, k: &KernelSpec) -> f64 {
    let n_obs = ds.n_obs();
    let eye = DMatrix::<f64>::identity(n_obs, n_obs);
    let m = brute_smoother(ds, h, k);
    let r = &eye - &m;
    let p = r.transpose() * &r;
    let d = build_dummy_matrix(ds.n(), ds.t_len()).unwrap();
    let q1 = &eye - &d * (d.transpose() * &p * &d).try_inverse().unwrap() * d.transpose() * &p;
    let x = ds.x();
    let q2 = if x.ncols() == 0 {
        eye.clone()
    } else {
        let xpq = x.transpose() * &p * &q1;
        &eye - x * (&xpq * x).try_inverse().unwrap() * xpq
    };
    let resid_op = &r * q1 * q2;
    let l = &eye - &resid_op;
    let v = resid_op * ds.y();
    (0..n_obs).map(|i| (v[i] / (1.0 - l[(i, i)])).powi(2)).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Absolute difference scaled by `max(1, |b|)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}
