//! Profile least-squares dummy-variable estimator for
//! `Y = Xβ + g(Z) + Dα + V`.
//!
//! With `R = I - M`, `X̃ = RX`, `Ỹ = RY` and `D̃ = RD` the estimator is
//!
//! ```text
//! β̂ = (X̃ᵀQ̃X̃)⁻¹ X̃ᵀQ̃Ỹ,           Q̃ = I - D̃(D̃ᵀD̃)⁻¹D̃ᵀ
//! α̂ = (D̃ᵀD̃)⁻¹ D̃ᵀ(Ỹ - X̃β̂),      α̂₁ = -Σ α̂ᵢ
//! ĝ(z) = m(z)ᵀ Q₁ (Y - Xβ̂),        Q₁ = I - D(DᵀPD)⁻¹DᵀP,  P = RᵀR
//! V̂ = R Q₁ Q₂ Y,                    Q₂ = I - X(XᵀPQ₁X)⁻¹XᵀPQ₁
//! ```
//!
//! Since `DᵀP = D̃ᵀR` and `PQ₁ = RᵀQ̃R`, every quantity above is obtained from
//! `R`, `D̃` and the `(n-1) x nT` map `C = (D̃ᵀD̃)⁻¹D̃ᵀR` without forming `P`.
//! [`FitOperator`] holds that factored form; [`build_projections`] assembles
//! the dense matrices literally and is used for diagnostics.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::local_poly::{smoother_row_on, smoothing_matrix, SmootherMatrix};
use crate::panel_data::{apply_dummy, build_dummy_matrix, dummy_transpose_apply, PanelDataset};

/// Default number of equispaced grid points spanning the study interval.
pub const DEFAULT_GRID_POINTS: usize = 101;

/// Condition-number estimate above which a fit records a warning.
pub const CONDITION_WARNING: f64 = 1e10;

/// Residual trace per observation below which the fit counts as saturated.
pub const SATURATION_TOL: f64 = 1e-10;

/// `points` equispaced values covering `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points)
                .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Dense projection matrices of the estimator.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub m: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q_tilde: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    /// Diagonal of `L = I - (I - M) Q₁ Q₂`.
    pub hat_diag: DVector<f64>,
}

/// Assembles every projection matrix from its definition. Cubic in `nT`.
pub fn build_projections(ds: &PanelDataset, sm: &SmootherMatrix) -> Result<ProjectionSet> {
    let n_obs = ds.n_obs();
    let m = sm.matrix();
    if m.nrows() != n_obs || m.ncols() != n_obs {
        return Err(Error::LengthMismatch { expected: n_obs, got: m.nrows() });
    }
    let eye = DMatrix::<f64>::identity(n_obs, n_obs);
    let r = &eye - m;
    let p = r.transpose() * &r;
    let d = build_dummy_matrix(ds.n(), ds.t_len())?;

    let dtp = d.transpose() * &p;
    let dtpd = &dtp * &d;
    let dtpd_chol = spd_factor(dtpd, "DᵀPD")?.0;
    let q1 = &eye - &d * dtpd_chol.solve(&dtp);

    let d_tilde = &r * &d;
    let dtd_chol = spd_factor(d_tilde.transpose() * &d_tilde, "D̃ᵀD̃")?.0;
    let q_tilde = &eye - &d_tilde * dtd_chol.solve(&d_tilde.transpose());

    let x = ds.x();
    let q2 = if x.ncols() == 0 {
        eye.clone()
    } else {
        let xtpq1 = x.transpose() * &p * &q1;
        let chol = solve_general(&xtpq1 * x, "XᵀPQ₁X")?;
        &eye - x * chol.solve(&xtpq1).ok_or_else(|| Error::SingularProjection("XᵀPQ₁X".into()))?
    };
    let resid = &r * &q1 * &q2;
    let hat_diag = DVector::from_fn(n_obs, |k, _| 1.0 - resid[(k, k)]);
    Ok(ProjectionSet { m: m.clone(), p, q_tilde, q1, q2, hat_diag })
}

fn solve_general(a: DMatrix<f64>, name: &str) -> Result<nalgebra::LU<f64, Dyn, Dyn>> {
    let scale = a.amax();
    let lu = a.lu();
    let u = lu.u();
    let tiny = (0..u.nrows()).any(|i| u[(i, i)].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE));
    if tiny {
        return Err(Error::SingularProjection(name.into()));
    }
    Ok(lu)
}

/// Cholesky factor with a relative pivot guard, plus a rough condition estimate.
fn spd_factor(a: DMatrix<f64>, name: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let dim = a.nrows();
    if dim == 0 {
        return Ok((Cholesky::new(a).expect("empty matrix factorizes"), 1.0));
    }
    let scale = (0..dim).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let chol = Cholesky::new(a).ok_or_else(|| Error::SingularProjection(name.into()))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..dim {
        let piv = l[(i, i)] * l[(i, i)];
        lo = lo.min(piv);
        hi = hi.max(piv);
    }
    if !(lo > 1e-13 * scale) {
        return Err(Error::SingularProjection(name.into()));
    }
    Ok((chol, hi / lo))
}

/// The estimator as a collection of linear maps of the response, for a fixed
/// design `(X, Z)`, bandwidth and kernel.
#[derive(Debug)]
pub struct FitOperator {
    n: usize,
    t_len: usize,
    h: f64,
    kernel: KernelSpec,
    zs: Vec<f64>,
    x: DMatrix<f64>,
    /// `R = I - M`.
    resid_maker: DMatrix<f64>,
    /// `C = (D̃ᵀD̃)⁻¹ D̃ᵀ R`: maps `Y - Xβ` to the free effects.
    effect_map: DMatrix<f64>,
    /// `B = (X̃ᵀQ̃X̃)⁻¹ X̃ᵀ Q̃ R`: maps `Y` to `β̂`.
    beta_map: DMatrix<f64>,
    /// `l_kk`, diagonal of `I - R Q₁ Q₂`.
    leverage: DVector<f64>,
    /// `tr(Q₂ᵀQ₁ᵀ P Q₁Q₂)`.
    resid_trace: f64,
    warnings: Vec<String>,
}

impl FitOperator {
    pub fn build(ds: &PanelDataset, h: f64, kernel: &KernelSpec) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::NonPositiveBandwidth(h));
        }
        if ds.n() < 2 {
            return Err(Error::InvalidShape(format!(
                "fixed-effects estimation needs at least two units, got n = {}",
                ds.n()
            )));
        }
        let (n, t_len, n_obs) = (ds.n(), ds.t_len(), ds.n_obs());
        let mut warnings = Vec::new();

        let mut r = smoothing_matrix(ds, h, kernel)?.into_matrix();
        r.neg_mut();
        for k in 0..n_obs {
            r[(k, k)] += 1.0;
        }

        // D̃ = R D: column j is the unit-(j+1) column block sum minus unit 0's.
        let mut unit_sums = DMatrix::<f64>::zeros(n_obs, n);
        for i in 0..n {
            let mut col = unit_sums.column_mut(i);
            for t in 0..t_len {
                col += r.column(i * t_len + t);
            }
        }
        let d_tilde = DMatrix::from_fn(n_obs, n - 1, |row, j| {
            unit_sums[(row, j + 1)] - unit_sums[(row, 0)]
        });
        drop(unit_sums);

        let (gram_chol, cond) = spd_factor(d_tilde.tr_mul(&d_tilde), "D̃ᵀD̃ (= DᵀPD)")?;
        if cond > CONDITION_WARNING {
            warnings.push(format!("D̃ᵀD̃ condition estimate {cond:.3e} exceeds {CONDITION_WARNING:e}"));
        }
        let effect_map = gram_chol.solve(&d_tilde.tr_mul(&r));

        // Q̃R = R - D̃C; overwritten below by the residual operator R Q₁ Q₂.
        let mut resid_op = r.clone();
        resid_op.gemm(-1.0, &d_tilde, &effect_map, 1.0);

        let x = ds.x().clone();
        let p = x.ncols();
        let beta_map = if p == 0 {
            DMatrix::zeros(0, n_obs)
        } else {
            let x_tilde = &r * &x;
            let qx = &x_tilde - &d_tilde * (&effect_map * &x);
            let (xchol, xcond) = spd_factor(x_tilde.tr_mul(&qx), "XᵀPQ₁X")?;
            if xcond > CONDITION_WARNING {
                warnings.push(format!("XᵀPQ₁X condition estimate {xcond:.3e} exceeds {CONDITION_WARNING:e}"));
            }
            let beta_map = xchol.solve(&x_tilde.tr_mul(&resid_op));
            resid_op.gemm(-1.0, &qx, &beta_map, 1.0);
            beta_map
        };
        let leverage = DVector::from_fn(n_obs, |k, _| 1.0 - resid_op[(k, k)]);
        let resid_trace = resid_op.norm_squared();
        if !(resid_trace > SATURATION_TOL * n_obs as f64) {
            return Err(Error::DegenerateVariance(format!(
                "no residual degrees of freedom left (tr(LᵀL) = {resid_trace:.3e}); the fit interpolates the data"
            )));
        }

        Ok(Self {
            n,
            t_len,
            h,
            kernel: kernel.clone(),
            zs: ds.z().as_slice().to_vec(),
            x,
            resid_maker: r,
            effect_map,
            beta_map,
            leverage,
            resid_trace,
            warnings,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Diagonal entries `l_kk` of the fitted-value operator.
    pub fn leverage(&self) -> &DVector<f64> {
        &self.leverage
    }

    pub fn residual_trace(&self) -> f64 {
        self.resid_trace
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `β̂` for an arbitrary response.
    pub fn beta(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.beta_map * y
    }

    /// `V̂ = R Q₁ Q₂ Y`.
    pub fn residuals(&self, y: &DVector<f64>) -> DVector<f64> {
        self.estimate(y).residuals
    }

    /// `Q₁ (Y - Xβ̂) = Y - Xβ̂ - Dα̂` together with the free effects `α̂₂..α̂ₙ`.
    fn partial_out(&self, y: &DVector<f64>, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut v = y.clone();
        if beta.len() > 0 {
            v.gemv(-1.0, &self.x, beta, 1.0);
        }
        let free = &self.effect_map * &v;
        let partialled = v - apply_dummy(free.as_slice(), self.t_len);
        (partialled, free)
    }

    /// Applies `Q₁` to a vector.
    pub fn apply_q1(&self, v: &DVector<f64>) -> DVector<f64> {
        let free = &self.effect_map * v;
        v - apply_dummy(free.as_slice(), self.t_len)
    }

    /// `wᵀ Q₁ w` for a weight vector `w` of length `nT`.
    pub fn q1_quadratic(&self, w: &[f64]) -> f64 {
        let wv = DVector::from_column_slice(w);
        let free = &self.effect_map * &wv;
        let dt_w = dummy_transpose_apply(w, self.n, self.t_len);
        wv.norm_squared() - dt_w.dot(&free)
    }

    /// Level and slope smoother rows at `z`.
    pub fn rows_at(&self, z: f64) -> Result<crate::local_poly::SmootherRow> {
        smoother_row_on(z, &self.zs, self.h, &self.kernel)
    }

    /// Smoothing matrix `M = I - R`.
    pub fn smoother(&self) -> SmootherMatrix {
        let m = DMatrix::identity(self.zs.len(), self.zs.len()) - &self.resid_maker;
        crate::local_poly::SmootherMatrix::from_parts(m, self.h)
    }

    fn estimate(&self, y: &DVector<f64>) -> Estimate {
        let beta = self.beta(y);
        let (partialled, free) = self.partial_out(y, &beta);
        let residuals = &self.resid_maker * &partialled;
        Estimate { beta, partialled, free, residuals }
    }
}

struct Estimate {
    beta: DVector<f64>,
    partialled: DVector<f64>,
    free: DVector<f64>,
    residuals: DVector<f64>,
}

/// Estimate of `g` and `g'` on a grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GridCurve {
    pub z: Vec<f64>,
    pub level: Vec<f64>,
    pub slope: Vec<f64>,
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    /// All `n` fixed effects, `α̂₁` first.
    pub alpha_hat: DVector<f64>,
    pub g_grid: GridCurve,
    pub residuals: DVector<f64>,
    pub sigma2_hat: f64,
    pub h: f64,
    /// `Q₁ (Y - Xβ̂)`: the response with the linear part and fixed effects removed.
    pub partialled: DVector<f64>,
    pub fitted: DVector<f64>,
    operator: Arc<FitOperator>,
    grid_operator: Arc<OnceLock<DMatrix<f64>>>,
    projections: Arc<OnceLock<Result<ProjectionSet>>>,
}

/// Fits on the default 101-point grid over the study interval.
pub fn fit(ds: &PanelDataset, h: f64, kernel: &KernelSpec) -> Result<FitResult> {
    let (lo, hi) = ds.interval();
    fit_on_grid(ds, h, kernel, &uniform_grid(lo, hi, DEFAULT_GRID_POINTS))
}

pub fn fit_on_grid(ds: &PanelDataset, h: f64, kernel: &KernelSpec, grid: &[f64]) -> Result<FitResult> {
    let op = Arc::new(FitOperator::build(ds, h, kernel)?);
    fit_with_operator(op, ds.y(), grid)
}

/// Fits a response against an already built operator.
pub fn fit_with_operator(op: Arc<FitOperator>, y: &DVector<f64>, grid: &[f64]) -> Result<FitResult> {
    if y.len() != op.zs.len() {
        return Err(Error::LengthMismatch { expected: op.zs.len(), got: y.len() });
    }
    let est = op.estimate(y);
    let mut level = Vec::with_capacity(grid.len());
    let mut slope = Vec::with_capacity(grid.len());
    for &z in grid {
        let rows = op.rows_at(z)?;
        level.push(dot(&rows.level, est.partialled.as_slice()));
        slope.push(dot(&rows.slope, est.partialled.as_slice()));
    }
    let sigma2_hat = est.residuals.norm_squared() / op.resid_trace;
    let mut alpha = Vec::with_capacity(op.n);
    alpha.push(-est.free.sum());
    alpha.extend(est.free.iter());
    let fitted = y - &est.residuals;
    Ok(FitResult {
        beta_hat: est.beta,
        alpha_hat: DVector::from_vec(alpha),
        g_grid: GridCurve { z: grid.to_vec(), level, slope },
        residuals: est.residuals,
        sigma2_hat,
        h: op.h,
        partialled: est.partialled,
        fitted,
        operator: op,
        grid_operator: Arc::new(OnceLock::new()),
        projections: Arc::new(OnceLock::new()),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl FitResult {
    pub fn operator(&self) -> &Arc<FitOperator> {
        &self.operator
    }

    pub fn warnings(&self) -> &[String] {
        self.operator.warnings()
    }

    /// `(ĝ(z), ĝ'(z))` at an arbitrary point.
    pub fn g_at(&self, z: f64) -> Result<(f64, f64)> {
        let rows = self.operator.rows_at(z)?;
        Ok((dot(&rows.level, self.partialled.as_slice()), dot(&rows.slope, self.partialled.as_slice())))
    }

    /// Plug-in `Var{ĝ(z) | D} = m(z)ᵀ Q₁ m(z) σ̂²`, i.e.
    /// `(1,0)(ZᵀWZ)⁻¹(ZᵀW Q₁ WZ)(ZᵀWZ)⁻¹(1,0)ᵀ σ̂²`.
    pub fn conditional_variance(&self, z: f64) -> Result<f64> {
        let rows = self.operator.rows_at(z)?;
        self.positive_variance(z, self.operator.q1_quadratic(&rows.level) * self.sigma2_hat)
    }

    /// Slope-row analog of [`Self::conditional_variance`], used by the
    /// derivative band.
    pub fn conditional_variance_slope(&self, z: f64) -> Result<f64> {
        let rows = self.operator.rows_at(z)?;
        self.positive_variance(z, self.operator.q1_quadratic(&rows.slope) * self.sigma2_hat)
    }

    fn positive_variance(&self, z: f64, value: f64) -> Result<f64> {
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonPositiveVariance { z, value })
        }
    }

    /// The `G x nT` matrix mapping a response to `ĝ` on the fit grid.
    pub fn grid_operator(&self) -> Result<&DMatrix<f64>> {
        if let Some(a) = self.grid_operator.get() {
            return Ok(a);
        }
        let op = &self.operator;
        let grid = &self.g_grid.z;
        let n_obs = op.zs.len();
        let mut rows = DMatrix::<f64>::zeros(grid.len(), n_obs);
        for (g, &z) in grid.iter().enumerate() {
            let r = op.rows_at(z)?;
            for (c, v) in r.level.iter().enumerate() {
                rows[(g, c)] = *v;
            }
        }
        // L Q₁ = L - (L D) C
        let mut ld = DMatrix::<f64>::zeros(grid.len(), op.n - 1);
        for g in 0..grid.len() {
            let row: Vec<f64> = rows.row(g).iter().copied().collect();
            let dt = dummy_transpose_apply(&row, op.n, op.t_len);
            ld.row_mut(g).copy_from(&dt.transpose());
        }
        rows.gemm(-1.0, &ld, &op.effect_map, 1.0);
        // (L Q₁) Q₂ = L Q₁ - (L Q₁ X) B
        if op.x.ncols() > 0 {
            let lqx = &rows * &op.x;
            rows.gemm(-1.0, &lqx, &op.beta_map, 1.0);
        }
        Ok(self.grid_operator.get_or_init(|| rows))
    }

    /// Dense projection matrices (built on first use; cubic in `nT`).
    pub fn projections(&self, ds: &PanelDataset) -> Result<&ProjectionSet> {
        self.projections
            .get_or_init(|| build_projections(ds, &self.operator.smoother()))
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// `(ĝ(z), ĝ'(z))`.
pub fn g_at(fr: &FitResult, z: f64) -> Result<(f64, f64)> {
    fr.g_at(z)
}

pub fn conditional_variance(fr: &FitResult, z: f64) -> Result<f64> {
    fr.conditional_variance(z)
}
