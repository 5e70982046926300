//! Monte-Carlo harness on the reference data-generating process
//!
//! `Y_it = X_itᵀβ + 0.8 cos(π Z_it) + α_i + V_it` with `X_it ~ U[-1, 1]³`,
//! `Z_it ~ U[-1, 1]`, `V_it ~ N(0, 1)` and `α_i = ε_i + c Z̄_i` for `i ≥ 2`,
//! `α_1 = -Σ_{i≥2} α_i`.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use nalgebra::{DMatrix, DVector};

use crate::bandwidth::{default_grid, select_bandwidth};
use crate::bootstrap_scb::{bootstrap_band, BootstrapConfig};
use crate::error::{Error, Result};
use crate::fe_estimator::{fit_on_grid, uniform_grid, FitOperator, DEFAULT_GRID_POINTS};
use crate::kernels::KernelSpec;
use crate::panel_data::{stack_effects, PanelDataset};
use crate::rng::{derive_seed, stream};
use crate::scb_asymptotic::asymptotic_band;

const REPLICATE_TAG: u64 = 1;
const BOOTSTRAP_TAG: u64 = 2;

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

pub fn true_g(z: f64) -> f64 {
    0.8 * (std::f64::consts::PI * z).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpConfig {
    pub n: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub c: f64,
    pub beta: Vec<f64>,
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(n: usize, t_len: usize, c: f64, seed: u64) -> Self {
        Self { n, t_len, c, beta: vec![-1.0, 3.0, 5.0], seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t_len < 2 {
            return Err(Error::InvalidConfig(format!("need n >= 2 and T >= 2, got n = {}, T = {}", self.n, self.t_len)));
        }
        if !self.c.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("non-finite c or beta".into()));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Parameters a dataset was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: Vec<f64>,
    /// All `n` effects; they sum to zero.
    pub alpha: Vec<f64>,
}

impl Truth {
    pub fn g(&self, z: f64) -> f64 {
        true_g(z)
    }
}

/// Draws one panel. Observations are generated unit by unit, period by
/// period (`x_1..x_p`, `z`, `v`), then the unit shocks `ε_2..ε_n`.
pub fn generate(cfg: &DgpConfig) -> Result<(PanelDataset, Truth)> {
    cfg.validate()?;
    let (n, t, p) = (cfg.n, cfg.t_len, cfg.beta.len());
    let rows = n * t;
    let mut rng = stream(cfg.seed, 0);
    let mut x = DMatrix::<f64>::zeros(rows, p);
    let mut z = DVector::<f64>::zeros(rows);
    let mut v = DVector::<f64>::zeros(rows);
    for k in 0..rows {
        for j in 0..p {
            x[(k, j)] = rng.random_range(-1.0..1.0);
        }
        z[k] = rng.random_range(-1.0..1.0);
        v[k] = StandardNormal.sample(&mut rng);
    }
    let mut alpha = vec![0.0; n];
    for i in 1..n {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let zbar = z.rows(i * t, t).sum() / t as f64;
        alpha[i] = eps + cfg.c * zbar;
    }
    alpha[0] = -alpha[1..].iter().sum::<f64>();
    let beta = DVector::from_column_slice(&cfg.beta);
    let y = &x * &beta + z.map(true_g) + stack_effects(&alpha, t) + v;
    let ds = PanelDataset::new(n, t, y, x, z, Some((-1.0, 1.0)))?;
    Ok((ds, Truth { beta: cfg.beta.clone(), alpha }))
}

/// `Σ_g(0) = ν₀ Σ_t σ_t² f_t / f²` for the reference process, where
/// `f_t = 1/2`, `f = T/2` and `σ_t² = 1 - 1/T`. Constant in `z`.
pub fn sigma_g_oracle(t_len: usize, k: &KernelSpec) -> f64 {
    let t = t_len as f64;
    k.nu0() * within_noise(t) / (0.25 * t * t)
}

/// `Σ_g'(z) = ν₂ Σ_t σ_t² f_t / (f² μ₂²)`.
pub fn sigma_gp_oracle(t_len: usize, k: &KernelSpec) -> f64 {
    let t = t_len as f64;
    k.nu2() * within_noise(t) / (0.25 * t * t * k.mu2() * k.mu2())
}

fn within_noise(t: f64) -> f64 {
    0.5 * t * (1.0 - 1.0 / t)
}

/// Bandwidth used inside each replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum HPolicy {
    Fixed(f64),
    /// `n^{-1/4}` times the sample range of `Z`.
    RuleOfThumb,
    /// `n^{-1/2}` times the sample range of `Z`. Undersmooths so that the
    /// smoothing bias stays small next to the noise; used for coverage runs.
    Undersmooth,
    /// Cross-validation over the default candidate grid.
    Cv,
}

impl HPolicy {
    pub fn bandwidth(&self, ds: &PanelDataset, k: &KernelSpec) -> Result<f64> {
        let n = ds.n() as f64;
        match self {
            HPolicy::Fixed(h) => Ok(*h),
            HPolicy::RuleOfThumb => Ok(n.powf(-0.25) * sample_range(ds)),
            HPolicy::Undersmooth => Ok(n.powf(-0.5) * sample_range(ds)),
            HPolicy::Cv => Ok(select_bandwidth(ds, k, &default_grid(ds))?.h_cv),
        }
    }

    pub fn label(&self) -> String {
        match self {
            HPolicy::Fixed(h) => format!("fixed h = {h}"),
            HPolicy::RuleOfThumb => "h = n^(-1/4) range(Z)".into(),
            HPolicy::Undersmooth => "h = n^(-1/2) range(Z)".into(),
            HPolicy::Cv => "h by cross-validation per replicate".into(),
        }
    }
}

fn sample_range(ds: &PanelDataset) -> f64 {
    ds.z().max() - ds.z().min()
}

/// Band construction scored in coverage runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageMethod {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefStats {
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub table: u8,
    pub config: DgpConfig,
    pub reps: usize,
    pub h_policy: HPolicy,
    pub h_policy_note: String,
    pub method: Option<CoverageMethod>,
    pub alpha: Option<f64>,
    pub boot_reps: Option<usize>,
    /// Pilot bandwidth of asymptotic runs; `None` means the pilot rule.
    pub pilot: Option<f64>,
    pub dof_correction: Option<bool>,
    pub completed: usize,
    pub failures: Vec<(usize, String)>,
    pub mean_h: f64,
    /// Per coefficient of `β̂`.
    pub coefficients: Vec<CoefStats>,
    pub coverage: Option<f64>,
    /// Only filled in when timing was requested; leaving it out keeps reports
    /// byte-reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

/// Options shared by the table runs.
#[derive(Debug, Clone)]
pub struct McOptions {
    pub reps: usize,
    pub h_policy: HPolicy,
    pub kernel: KernelSpec,
    /// Pilot bandwidth of the bias estimate in asymptotic bands; `None` uses
    /// the pilot rule.
    pub pilot: Option<f64>,
    /// See [`BootstrapConfig::dof_correction`].
    pub dof_correction: bool,
    pub record_time: bool,
}

impl McOptions {
    pub fn new(reps: usize, h_policy: HPolicy, kernel: KernelSpec) -> Self {
        Self { reps, h_policy, kernel, pilot: None, dof_correction: true, record_time: false }
    }
}

struct Replicate {
    beta: Vec<f64>,
    h: f64,
    covered: Option<bool>,
}

fn replicate_seed(cfg: &DgpConfig, rep: usize) -> u64 {
    derive_seed(cfg.seed, REPLICATE_TAG, rep as u64)
}

fn run<F>(cfg: &DgpConfig, opts: &McOptions, one: F) -> Result<(Vec<std::result::Result<Replicate, String>>, Option<f64>)>
where
    F: Fn(usize, &PanelDataset) -> Result<Replicate> + Sync,
{
    cfg.validate()?;
    if opts.reps < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 replicates, got {}", opts.reps)));
    }
    let start = Instant::now();
    let results: Vec<std::result::Result<Replicate, String>> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| {
            let (ds, _) = generate(&cfg.with_seed(replicate_seed(cfg, rep))).map_err(|e| e.to_string())?;
            one(rep, &ds).map_err(|e| e.to_string())
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > MAX_FAILURE_SHARE * opts.reps as f64 {
        return Err(Error::TooManyFailures { failed, total: opts.reps });
    }
    let secs = opts.record_time.then(|| start.elapsed().as_secs_f64());
    Ok((results, secs))
}

fn summarize(
    table: u8,
    cfg: &DgpConfig,
    opts: &McOptions,
    results: Vec<std::result::Result<Replicate, String>>,
    secs: Option<f64>,
) -> McReport {
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => ok.push(rep),
            Err(msg) => failures.push((i, msg)),
        }
    }
    let m = ok.len() as f64;
    let coefficients = (0..cfg.beta.len())
        .map(|j| {
            let errs: Vec<f64> = ok.iter().map(|r| r.beta[j] - cfg.beta[j]).collect();
            let bias = errs.iter().sum::<f64>() / m;
            let var = errs.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / m;
            CoefStats { bias, sd: var.sqrt(), mse }
        })
        .collect();
    let scored: Vec<bool> = ok.iter().filter_map(|r| r.covered).collect();
    let coverage =
        (!scored.is_empty()).then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64);
    McReport {
        table,
        config: cfg.clone(),
        reps: opts.reps,
        h_policy: opts.h_policy.clone(),
        h_policy_note: opts.h_policy.label(),
        method: None,
        alpha: None,
        boot_reps: None,
        pilot: None,
        dof_correction: None,
        completed: ok.len(),
        failures,
        mean_h: ok.iter().map(|r| r.h).sum::<f64>() / m,
        coefficients,
        coverage,
        wall_clock_secs: secs,
    }
}

/// Bias, SD and MSE of `β̂` over `opts.reps` replicates.
pub fn run_table1(cfg: &DgpConfig, opts: &McOptions) -> Result<McReport> {
    let (results, secs) = run(cfg, opts, |_, ds| {
        let h = opts.h_policy.bandwidth(ds, &opts.kernel)?;
        let op = FitOperator::build(ds, h, &opts.kernel)?;
        Ok(Replicate { beta: op.beta(ds.y()).iter().copied().collect(), h, covered: None })
    })?;
    Ok(summarize(1, cfg, opts, results, secs))
}

/// Simultaneous coverage of `g` on the 101-point grid over `[-1, 1]`.
pub fn run_table2(
    cfg: &DgpConfig,
    opts: &McOptions,
    method: CoverageMethod,
    alpha: f64,
    boot_reps: usize,
) -> Result<McReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::DomainError(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let grid = uniform_grid(-1.0, 1.0, DEFAULT_GRID_POINTS);
    let (results, secs) = run(cfg, opts, |rep, ds| {
        let h = opts.h_policy.bandwidth(ds, &opts.kernel)?;
        let fr = fit_on_grid(ds, h, &opts.kernel, &grid)?;
        let band = match method {
            CoverageMethod::Asymptotic => asymptotic_band(&fr, ds, &grid, alpha, opts.pilot)?,
            CoverageMethod::Bootstrap => {
                let seed = derive_seed(replicate_seed(cfg, rep), BOOTSTRAP_TAG, 0);
                let mut bc = BootstrapConfig::new(boot_reps, seed, grid.clone());
                bc.dof_correction = opts.dof_correction;
                bootstrap_band(ds, &fr, alpha, &bc)?.band
            }
        };
        Ok(Replicate {
            beta: fr.beta_hat.iter().copied().collect(),
            h,
            covered: Some(band.covers(true_g)),
        })
    })?;
    let mut report = summarize(2, cfg, opts, results, secs);
    report.method = Some(method);
    report.alpha = Some(alpha);
    report.boot_reps = (method == CoverageMethod::Bootstrap).then_some(boot_reps);
    match method {
        CoverageMethod::Asymptotic => report.pilot = opts.pilot,
        CoverageMethod::Bootstrap => report.dof_correction = Some(opts.dof_correction),
    }
    Ok(report)
}
