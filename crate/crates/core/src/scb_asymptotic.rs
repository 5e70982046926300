//! Simultaneous confidence bands from the Gumbel limit of the studentized
//! sup-deviation.
//!
//! For a study interval `[c, d]` all constants are computed at the effective
//! bandwidth `h_eff = h / (d - c)`, which is how the `[0, 1]` theory carries
//! over to a general interval.

use serde::{Deserialize, Serialize};

use crate::bandwidth::pilot_bandwidth;
use crate::error::{Error, Result};
use crate::fe_estimator::FitResult;
use crate::kernels::KernelSpec;
use crate::local_poly::local_cubic_d2_on;
use crate::panel_data::PanelDataset;

/// Which construction produced a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandMethod {
    AsymptoticLevel,
    AsymptoticDerivative,
    Bootstrap,
}

impl BandMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BandMethod::AsymptoticLevel => "asymptotic-level",
            BandMethod::AsymptoticDerivative => "asymptotic-derivative",
            BandMethod::Bootstrap => "bootstrap",
        }
    }
}

/// A simultaneous band on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub method: BandMethod,
    /// Multiplier of the standard error: `d_n + u_α (-2 log h_eff)^{-1/2}`
    /// for the asymptotic bands, `ĉ_α` for the bootstrap.
    pub critical: f64,
    pub h: f64,
    pub h_star: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BandResult {
    pub(crate) fn assemble(
        grid: Vec<f64>,
        center: Vec<f64>,
        half_width: &[f64],
        alpha: f64,
        method: BandMethod,
        critical: f64,
        h: f64,
        h_star: Option<f64>,
        warnings: Vec<String>,
    ) -> Self {
        let lower = center.iter().zip(half_width).map(|(c, w)| c - w).collect();
        let upper = center.iter().zip(half_width).map(|(c, w)| c + w).collect();
        Self { grid, center, lower, upper, alpha, method, critical, h, h_star, warnings }
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| 0.5 * (u - l)).collect()
    }

    /// True when `f` evaluated on the grid lies inside the band everywhere.
    pub fn covers(&self, f: impl Fn(f64) -> f64) -> bool {
        self.grid
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&z, (&lo, &hi))| {
                let v = f(z);
                lo <= v && v <= hi
            })
    }
}

/// Constants entering the Gumbel-limit bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticConstants {
    pub d_n: f64,
    /// Only defined for kernels vanishing at their support endpoint.
    pub d_n1: Option<f64>,
    pub u_alpha: f64,
    /// `-2 log h_eff`.
    pub log_h_eff: f64,
    pub sigma_g: Option<f64>,
    pub sigma_gp: Option<f64>,
}

impl AsymptoticConstants {
    pub fn new(h_eff: f64, alpha: f64, k: &KernelSpec) -> Result<Self> {
        let d_n = compute_dn(h_eff, k)?;
        let d_n1 = if k.vanishes_at_boundary() { Some(compute_dn1(h_eff, k)?) } else { None };
        Ok(Self {
            d_n,
            d_n1,
            u_alpha: gumbel_quantile(alpha)?,
            log_h_eff: -2.0 * h_eff.ln(),
            sigma_g: None,
            sigma_gp: None,
        })
    }

    /// `d_n + u_α (-2 log h_eff)^{-1/2}`.
    pub fn level_multiplier(&self) -> f64 {
        self.d_n + self.u_alpha / self.log_h_eff.sqrt()
    }

    pub fn derivative_multiplier(&self) -> Option<f64> {
        self.d_n1.map(|d| d + self.u_alpha / self.log_h_eff.sqrt())
    }
}

/// `u` solving `exp(-2 exp(-u)) = 1 - α`.
pub fn gumbel_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(std::f64::consts::LN_2 - (-(-alpha).ln_1p()).ln())
}

fn check_h_eff(h_eff: f64) -> Result<f64> {
    if !(h_eff > 0.0) || !h_eff.is_finite() {
        return Err(Error::NonPositiveBandwidth(h_eff));
    }
    if h_eff.ln() >= 0.0 {
        return Err(Error::BandwidthTooLarge(h_eff));
    }
    Ok(-2.0 * h_eff.ln())
}

/// Centering constant of the level sup-deviation. Branches on whether the
/// kernel vanishes at its support endpoint.
pub fn compute_dn(h_eff: f64, k: &KernelSpec) -> Result<f64> {
    let l = check_h_eff(h_eff)?;
    let root = l.sqrt();
    let nu0 = k.nu0();
    let tail = if k.vanishes_at_boundary() {
        (k.moments().int_dk_sq / (4.0 * nu0 * std::f64::consts::PI)).ln()
    } else {
        let ka = k.boundary_value();
        (ka * ka / (nu0 * std::f64::consts::PI.sqrt())).ln() + 0.5 * (1.0 / h_eff).ln().ln()
    };
    Ok(root + tail / root)
}

/// Centering constant of the derivative sup-deviation.
pub fn compute_dn1(h_eff: f64, k: &KernelSpec) -> Result<f64> {
    if !k.vanishes_at_boundary() {
        return Err(Error::KernelCaseUnsupported(format!(
            "derivative band needs K(A) = 0; {} has K(A) = {}",
            k.name(),
            k.boundary_value()
        )));
    }
    let l = check_h_eff(h_eff)?;
    let root = l.sqrt();
    let inner = k.moments().int_z2_dk_sq.sqrt() / (2.0 * std::f64::consts::PI * k.nu2().sqrt());
    Ok(root + inner.ln() / root)
}

/// `h / (d - c)`.
pub fn effective_bandwidth(h: f64, ds: &PanelDataset) -> f64 {
    h / ds.interval_width()
}

/// Warning text when `h` lies outside `[n^{-1/3}, n^{-1/5}] (d - c)`.
pub fn rate_window_warning(h: f64, n: usize, width: f64) -> Option<String> {
    let nf = n as f64;
    let (lo, hi) = (nf.powf(-1.0 / 3.0) * width, nf.powf(-0.2) * width);
    if h < lo || h > hi {
        Some(format!(
            "bandwidth {h} outside the admissible rate window [{lo:.6}, {hi:.6}] for n = {n}"
        ))
    } else {
        None
    }
}

/// `b̂(z) = h² μ₂ ĝ''(z) / 2` with `ĝ''` from a local-cubic fit of the
/// fixed-effects-partialled response at pilot bandwidth `h_star`.
pub fn bias_correction(fr: &FitResult, ds: &PanelDataset, grid: &[f64], h_star: f64) -> Result<Vec<f64>> {
    let k = fr.operator().kernel();
    let scale = fr.h * fr.h * k.mu2() / 2.0;
    let zs = ds.z().as_slice();
    grid.iter()
        .enumerate()
        .map(|(i, &z)| {
            local_cubic_d2_on(fr.partialled.as_slice(), zs, h_star, k, z)
                .map(|d2| scale * d2)
                .map_err(|e| match e {
                    Error::SingularLocalFit(msg) => Error::SingularLocalFit(format!("grid index {i}: {msg}")),
                    other => other,
                })
        })
        .collect()
}

/// Bias-corrected level band `ĝ - b̂ ± Δ_{1,α}` on `grid`. `h_star = None`
/// uses the pilot rule of [`pilot_bandwidth`].
pub fn asymptotic_band(
    fr: &FitResult,
    ds: &PanelDataset,
    grid: &[f64],
    alpha: f64,
    h_star: Option<f64>,
) -> Result<BandResult> {
    let k = fr.operator().kernel();
    let h_eff = effective_bandwidth(fr.h, ds);
    let consts = AsymptoticConstants::new(h_eff, alpha, k)?;
    let multiplier = consts.level_multiplier();
    let h_star = match h_star {
        Some(v) => v,
        None => pilot_bandwidth(ds)?,
    };
    let bias = bias_correction(fr, ds, grid, h_star)?;
    let mut center = Vec::with_capacity(grid.len());
    let mut half = Vec::with_capacity(grid.len());
    for (&z, b) in grid.iter().zip(&bias) {
        let (g, _) = fr.g_at(z)?;
        center.push(g - b);
        half.push(multiplier * fr.conditional_variance(z)?.sqrt());
    }
    let warnings = rate_window_warning(fr.h, ds.n(), ds.interval_width()).into_iter().collect();
    Ok(BandResult::assemble(
        grid.to_vec(),
        center,
        &half,
        alpha,
        BandMethod::AsymptoticLevel,
        multiplier,
        fr.h,
        Some(h_star),
        warnings,
    ))
}

/// Band for `g'` centred at `ĝ'` with the slope-row sandwich variance.
pub fn derivative_band(fr: &FitResult, ds: &PanelDataset, grid: &[f64], alpha: f64) -> Result<BandResult> {
    let k = fr.operator().kernel();
    if !k.vanishes_at_boundary() {
        return Err(Error::KernelCaseUnsupported(format!(
            "derivative band needs K(A) = 0; {} has K(A) = {}",
            k.name(),
            k.boundary_value()
        )));
    }
    let h_eff = effective_bandwidth(fr.h, ds);
    let consts = AsymptoticConstants::new(h_eff, alpha, k)?;
    let multiplier = consts.derivative_multiplier().expect("kernel vanishes at boundary");
    let mut center = Vec::with_capacity(grid.len());
    let mut half = Vec::with_capacity(grid.len());
    for &z in grid {
        let (_, slope) = fr.g_at(z)?;
        center.push(slope);
        half.push(multiplier * fr.conditional_variance_slope(z)?.sqrt());
    }
    let warnings = rate_window_warning(fr.h, ds.n(), ds.interval_width()).into_iter().collect();
    Ok(BandResult::assemble(
        grid.to_vec(),
        center,
        &half,
        alpha,
        BandMethod::AsymptoticDerivative,
        multiplier,
        fr.h,
        None,
        warnings,
    ))
}
