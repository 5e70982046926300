//! Command-line surface of `panel-scb`.
//!
//! `run` returns the process exit status: 0 on success, 2 on usage errors and
//! 1 on data or estimation errors (the message starts with the error name).

pub mod output;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panel_scb::bandwidth::{default_bounds, default_grid, log_grid, select_bandwidth};
use panel_scb::bootstrap_scb::{bootstrap_band, BootstrapConfig};
use panel_scb::fe_estimator::{uniform_grid, DEFAULT_GRID_POINTS};
use panel_scb::panel_data::{load_csv_with, validate, LoadOptions};
use panel_scb::scb_asymptotic::{asymptotic_band, derivative_band, AsymptoticConstants};
use panel_scb::sim_harness::{run_table1, run_table2, CoverageMethod, DgpConfig, HPolicy, McOptions};
use panel_scb::{fit_on_grid, Error, KernelSpec, PanelDataset};
use serde::Serialize;
use serde_json::{json, Map, Value};

use output::{digest, manifest_path, sibling, write_band, write_columns, write_json, BandMeta, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "panel-scb", version, about = "Partially linear fixed-effects panel models with simultaneous confidence bands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate β, the fixed effects, σ² and g on a grid.
    Fit(FitArgs),
    /// Simultaneous confidence band for g or g'.
    Band(BandArgs),
    /// Cross-validation curve over a log-spaced bandwidth grid.
    Cv(CvArgs),
    /// Monte-Carlo study on the reference data-generating process.
    Simulate(SimArgs),
    /// Print the moment constants of a kernel.
    KernelInfo(KernelArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Panel CSV with header `unit,time,y,z,x1..xp`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    /// Study interval `lo:hi`; the range of z by default.
    #[arg(long, value_parser = parse_interval)]
    interval: Option<(f64, f64)>,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Bandwidth, or `auto` for cross-validation.
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// Number of grid points over the study interval.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
    /// Output JSON; the grid CSV and manifest are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BandKind {
    Asymptotic,
    Bootstrap,
    Derivative,
}

#[derive(Debug, Args, Serialize)]
struct BandArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// Pilot bandwidth of the bias estimate, or `auto` for the pilot rule.
    #[arg(long, default_value = "auto")]
    pilot: String,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "asymptotic")]
    method: BandKind,
    #[arg(long, default_value_t = 200)]
    boot_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resample the raw residuals without degrees-of-freedom rescaling.
    #[arg(long)]
    no_dof_correction: bool,
    /// Band CSV; the manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    timing: bool,
}

#[derive(Debug, Args, Serialize)]
struct CvArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Smallest candidate; defaults to 0.5 n^(-1/3) (d - c).
    #[arg(long)]
    h_min: Option<f64>,
    /// Largest candidate; defaults to 2 n^(-1/5) (d - c).
    #[arg(long)]
    h_max: Option<f64>,
    #[arg(long, default_value_t = 20)]
    h_steps: usize,
    /// Curve CSV; the manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    timing: bool,
}

#[derive(Debug, Args, Serialize)]
struct SimArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    table: u8,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long = "T", default_value_t = 5)]
    #[serde(rename = "T")]
    t_len: usize,
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, value_enum, default_value = "asymptotic")]
    method: SimMethod,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    boot_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `rule` (n^(-1/4) range), `undersmooth` (n^(-1/2) range), `cv`, or a
    /// number. Table 1 defaults to `rule`, table 2 to `undersmooth`.
    #[arg(long)]
    bandwidth: Option<String>,
    /// Pilot bandwidth for asymptotic bands, or `auto` for the pilot rule.
    #[arg(long, default_value = "1.0")]
    pilot: String,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    #[arg(long)]
    no_dof_correction: bool,
    /// Report JSON; the manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SimMethod {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Args, Serialize)]
struct KernelArgs {
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    /// Also print d_n and d_n1 at this effective bandwidth.
    #[arg(long)]
    h_eff: Option<f64>,
}

fn parse_interval(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = a.trim().parse().map_err(|_| format!("bad lower bound {a:?}"))?;
    let hi: f64 = b.trim().parse().map_err(|_| format!("bad upper bound {b:?}"))?;
    Ok((lo, hi))
}

/// Runs the CLI on `argv` (program name first), writing to stdout/stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Band(a) => cmd_band(a, out),
        Command::Cv(a) => cmd_cv(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::KernelInfo(a) => cmd_kernel_info(a, out),
    }
}

fn kernel(name: &str) -> CliResult<KernelSpec> {
    KernelSpec::by_name(name).map_err(|_| CliError::Usage(format!("unknown kernel {name:?}; use epanechnikov or uniform")))
}

fn positive(flag: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{flag} must be positive, got {v}")))
    }
}

fn number_or_auto(flag: &str, s: &str) -> CliResult<Option<f64>> {
    if s == "auto" {
        return Ok(None);
    }
    let v = s.parse::<f64>().map_err(|_| CliError::Usage(format!("--{flag} expects a number or `auto`, got {s:?}")))?;
    positive(flag, v).map(Some)
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_grid(points: usize) -> CliResult<()> {
    if points == 0 {
        Err(CliError::Usage("--grid must be at least 1".into()))
    } else {
        Ok(())
    }
}

struct Loaded {
    ds: PanelDataset,
    digest: String,
}

fn load(a: &DataArgs) -> CliResult<Loaded> {
    let bytes = fs::read(&a.data).map_err(|e| Error::Io(format!("{}: {e}", a.data.display())))?;
    let ds = load_csv_with(bytes.as_slice(), LoadOptions { interval: a.interval })?;
    for w in validate(&ds).warnings {
        eprintln!("warning: {w}");
    }
    Ok(Loaded { ds, digest: digest(&bytes) })
}

fn resolve_bandwidth(spec: &str, ds: &PanelDataset, k: &KernelSpec) -> CliResult<f64> {
    match number_or_auto("bandwidth", spec)? {
        Some(h) => Ok(h),
        None => {
            let curve = select_bandwidth(ds, k, &default_grid(ds))?;
            if let Some(w) = &curve.warning {
                eprintln!("warning: {w}");
            }
            Ok(curve.h_cv)
        }
    }
}

fn flags<T: Serialize>(args: &T) -> Map<String, Value> {
    match serde_json::to_value(args) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

struct Emit<'a> {
    command: &'a str,
    flags: Map<String, Value>,
    seeds: Vec<u64>,
    input_digest: Option<String>,
    band: Option<BandMeta>,
    started: Option<Instant>,
}

impl Emit<'_> {
    fn manifest(self, out: &Path, outputs: Vec<PathBuf>) -> CliResult<()> {
        let names = outputs
            .iter()
            .map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect();
        let m = RunManifest {
            command: self.command.to_owned(),
            flags: self.flags,
            seeds: self.seeds,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            input_digest: self.input_digest,
            outputs: names,
            band: self.band,
            wall_clock_secs: self.started.map(|t| t.elapsed().as_secs_f64()),
        };
        write_json(&manifest_path(out), &m)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct FitSummary {
    n: usize,
    #[serde(rename = "T")]
    t_len: usize,
    h: f64,
    beta_hat: Vec<f64>,
    alpha_hat: Vec<f64>,
    sigma2_hat: f64,
    warnings: Vec<String>,
}

fn cmd_fit(a: FitArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = a.timing.then(Instant::now);
    let k = kernel(&a.data.kernel)?;
    check_grid(a.grid)?;
    let loaded = load(&a.data)?;
    let ds = &loaded.ds;
    let h = resolve_bandwidth(&a.bandwidth, ds, &k)?;
    let (lo, hi) = ds.interval();
    let fr = fit_on_grid(ds, h, &k, &uniform_grid(lo, hi, a.grid))?;
    let summary = FitSummary {
        n: ds.n(),
        t_len: ds.t_len(),
        h,
        beta_hat: fr.beta_hat.iter().copied().collect(),
        alpha_hat: fr.alpha_hat.iter().copied().collect(),
        sigma2_hat: fr.sigma2_hat,
        warnings: fr.warnings().to_vec(),
    };
    let g = &fr.g_grid;
    match &a.out {
        Some(path) => {
            write_json(path, &summary)?;
            let grid_path = sibling(path, "grid.csv");
            write_columns(fs::File::create(&grid_path)?, &["z", "g", "g_prime"], &[&g.z, &g.level, &g.slope])?;
            let mut f = flags(&a);
            f.insert("bandwidth".into(), json!(h));
            Emit { command: "fit", flags: f, seeds: vec![], input_digest: Some(loaded.digest), band: None, started }
                .manifest(path, vec![path.clone(), grid_path])
        }
        None => {
            serde_json::to_writer_pretty(&mut *out, &summary).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn cmd_band(a: BandArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = a.timing.then(Instant::now);
    let k = kernel(&a.data.kernel)?;
    check_alpha(a.alpha)?;
    check_grid(a.grid)?;
    let pilot = number_or_auto("pilot", &a.pilot)?;
    if a.method == BandKind::Bootstrap && a.boot_reps < 2 {
        return Err(CliError::Usage("--boot-reps must be at least 2".into()));
    }
    let loaded = load(&a.data)?;
    let ds = &loaded.ds;
    let h = resolve_bandwidth(&a.bandwidth, ds, &k)?;
    let (lo, hi) = ds.interval();
    let grid = uniform_grid(lo, hi, a.grid);
    let fr = fit_on_grid(ds, h, &k, &grid)?;
    let band = match a.method {
        BandKind::Asymptotic => asymptotic_band(&fr, ds, &grid, a.alpha, pilot)?,
        BandKind::Derivative => derivative_band(&fr, ds, &grid, a.alpha)?,
        BandKind::Bootstrap => {
            let mut cfg = BootstrapConfig::new(a.boot_reps, a.seed, grid.clone());
            cfg.dof_correction = !a.no_dof_correction;
            bootstrap_band(ds, &fr, a.alpha, &cfg)?.band
        }
    };
    for w in &band.warnings {
        eprintln!("warning: {w}");
    }
    match &a.out {
        Some(path) => {
            write_band(fs::File::create(path)?, &band)?;
            let mut f = flags(&a);
            f.insert("bandwidth".into(), json!(h));
            if let Some(hs) = band.h_star {
                f.insert("pilot".into(), json!(hs));
            }
            let seeds = if a.method == BandKind::Bootstrap { vec![a.seed] } else { vec![] };
            Emit {
                command: "band",
                flags: f,
                seeds,
                input_digest: Some(loaded.digest),
                band: Some(BandMeta::of(&band)),
                started,
            }
            .manifest(path, vec![path.clone()])
        }
        None => Ok(write_band(out, &band)?),
    }
}

fn cmd_cv(a: CvArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = a.timing.then(Instant::now);
    let k = kernel(&a.data.kernel)?;
    if a.h_steps == 0 {
        return Err(CliError::Usage("--h-steps must be at least 1".into()));
    }
    let loaded = load(&a.data)?;
    let ds = &loaded.ds;
    let (dlo, dhi) = default_bounds(ds);
    let lo = positive("h-min", a.h_min.unwrap_or(dlo))?;
    let hi = positive("h-max", a.h_max.unwrap_or(dhi))?;
    if a.h_steps > 1 && hi <= lo {
        return Err(CliError::Usage(format!("--h-max ({hi}) must exceed --h-min ({lo})")));
    }
    let curve = select_bandwidth(ds, &k, &log_grid(lo, hi, a.h_steps))?;
    if let Some(w) = &curve.warning {
        eprintln!("warning: {w}");
    }
    eprintln!("h_cv = {}", curve.h_cv);
    // failed candidates are written as NaN
    let scores: Vec<f64> = curve.scores.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
    match &a.out {
        Some(path) => {
            write_columns(fs::File::create(path)?, &["h", "cv"], &[&curve.grid, &scores])?;
            let mut f = flags(&a);
            f.insert("h_min".into(), json!(lo));
            f.insert("h_max".into(), json!(hi));
            f.insert("h_cv".into(), json!(curve.h_cv));
            Emit { command: "cv", flags: f, seeds: vec![], input_digest: Some(loaded.digest), band: None, started }
                .manifest(path, vec![path.clone()])
        }
        None => Ok(write_columns(out, &["h", "cv"], &[&curve.grid, &scores])?),
    }
}

fn cmd_simulate(a: SimArgs, out: &mut dyn Write) -> CliResult<()> {
    let k = kernel(&a.kernel)?;
    check_alpha(a.alpha)?;
    if a.reps < 2 {
        return Err(CliError::Usage("--reps must be at least 2".into()));
    }
    if a.n < 2 || a.t_len < 2 {
        return Err(CliError::Usage("--n and --T must be at least 2".into()));
    }
    let policy = match a.bandwidth.as_deref() {
        None if a.table == 1 => HPolicy::RuleOfThumb,
        None => HPolicy::Undersmooth,
        Some("rule") => HPolicy::RuleOfThumb,
        Some("undersmooth") => HPolicy::Undersmooth,
        Some("cv") => HPolicy::Cv,
        Some(s) => HPolicy::Fixed(positive(
            "bandwidth",
            s.parse().map_err(|_| CliError::Usage(format!("--bandwidth expects rule, undersmooth, cv or a number, got {s:?}")))?,
        )?),
    };
    let mut opts = McOptions::new(a.reps, policy, k);
    opts.pilot = number_or_auto("pilot", &a.pilot)?;
    opts.dof_correction = !a.no_dof_correction;
    opts.record_time = a.timing;
    let cfg = DgpConfig::new(a.n, a.t_len, a.c, a.seed);
    let report = match a.table {
        1 => run_table1(&cfg, &opts)?,
        _ => {
            let method = match a.method {
                SimMethod::Asymptotic => CoverageMethod::Asymptotic,
                SimMethod::Bootstrap => CoverageMethod::Bootstrap,
            };
            if method == CoverageMethod::Bootstrap && a.boot_reps < 2 {
                return Err(CliError::Usage("--boot-reps must be at least 2".into()));
            }
            run_table2(&cfg, &opts, method, a.alpha, a.boot_reps)?
        }
    };
    match &a.out {
        Some(path) => {
            write_json(path, &report)?;
            Emit {
                command: "simulate",
                flags: flags(&a),
                seeds: vec![a.seed],
                input_digest: None,
                band: None,
                started: None,
            }
            .manifest(path, vec![path.clone()])
        }
        None => {
            serde_json::to_writer_pretty(&mut *out, &report).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
            Ok(())
        }
    }
}

fn cmd_kernel_info(a: KernelArgs, out: &mut dyn Write) -> CliResult<()> {
    let k = kernel(&a.kernel)?;
    let m = k.moments();
    writeln!(out, "kernel = {}", k.name())?;
    writeln!(out, "support = [-{0}, {0}]", k.support())?;
    writeln!(out, "K(A) = {}", k.boundary_value())?;
    writeln!(out, "mu2 = {}", round(m.mu[2]))?;
    writeln!(out, "nu0 = {}", round(m.nu[0]))?;
    writeln!(out, "nu2 = {}", round(m.nu[2]))?;
    writeln!(out, "int_dk_sq = {}", round(m.int_dk_sq))?;
    writeln!(out, "int_z2_dk_sq = {}", round(m.int_z2_dk_sq))?;
    if let Some(h) = a.h_eff {
        let c = AsymptoticConstants::new(h, 0.05, &k).map_err(CliError::Run)?;
        writeln!(out, "d_n = {}", c.d_n)?;
        match c.d_n1 {
            Some(d) => writeln!(out, "d_n1 = {d}")?,
            None => writeln!(out, "d_n1 = undefined (K(A) != 0)")?,
        }
    }
    Ok(())
}

/// Quadrature noise trimmed to 12 significant digits for display.
fn round(v: f64) -> f64 {
    format!("{v:.12e}").parse().unwrap_or(v)
}
