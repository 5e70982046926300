//! Balanced panel container, CSV ingestion and the fixed-effects dummy matrix.
//!
//! Observations are stored stacked unit by unit: row `k = i * T + t` holds
//! unit `i`, period `t` (both zero-based). Every estimator in the crate relies
//! on this ordering when it applies the dummy matrix.

use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A balanced panel of `n` units observed over `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    n: usize,
    t_len: usize,
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DVector<f64>,
    interval: (f64, f64),
}

impl PanelDataset {
    /// Builds a dataset from stacked columns. The interval defaults to the
    /// empirical range of `z` when `interval` is `None`.
    pub fn new(
        n: usize,
        t_len: usize,
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DVector<f64>,
        interval: Option<(f64, f64)>,
    ) -> Result<Self> {
        if n == 0 || t_len == 0 {
            return Err(Error::InvalidShape(format!("n = {n}, T = {t_len}")));
        }
        let rows = n * t_len;
        if y.len() != rows {
            return Err(Error::LengthMismatch { expected: rows, got: y.len() });
        }
        if x.nrows() != rows {
            return Err(Error::LengthMismatch { expected: rows, got: x.nrows() });
        }
        if z.len() != rows {
            return Err(Error::LengthMismatch { expected: rows, got: z.len() });
        }
        if y.iter().chain(x.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonNumericField("non-finite value in panel".into()));
        }
        let (zmin, zmax) = min_max(z.as_slice());
        let interval = match interval {
            Some((lo, hi)) => {
                if !(lo < hi) {
                    return Err(Error::InvalidShape(format!("interval [{lo}, {hi}] is empty")));
                }
                if zmin < lo || zmax > hi {
                    return Err(Error::InvalidShape(format!(
                        "z range [{zmin}, {zmax}] escapes interval [{lo}, {hi}]"
                    )));
                }
                (lo, hi)
            }
            None => (zmin, zmax),
        };
        Ok(Self { n, t_len, y, x, z, interval })
    }

    /// Cross-section size.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Time length.
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Number of stacked observations, `nT`.
    pub fn n_obs(&self) -> usize {
        self.n * self.t_len
    }

    /// Number of linear regressors.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    /// The interval `[c, d]` on which the nonparametric component is studied.
    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Width `d - c` of the study interval.
    pub fn interval_width(&self) -> f64 {
        self.interval.1 - self.interval.0
    }

    /// Returns a copy with the response replaced; design and interval are kept.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n_obs() {
            return Err(Error::LengthMismatch { expected: self.n_obs(), got: y.len() });
        }
        Ok(Self { y, ..self.clone() })
    }

    /// Returns a copy with an explicit study interval.
    pub fn with_interval(&self, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            self.n,
            self.t_len,
            self.y.clone(),
            self.x.clone(),
            self.z.clone(),
            Some((lo, hi)),
        )
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Options for [`load_csv_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Study interval override; the empirical range of `z` otherwise.
    pub interval: Option<(f64, f64)>,
}

/// Reads a panel from CSV with header `unit,time,y,z,x1,...,xp`.
pub fn load_csv<R: Read>(source: R) -> Result<PanelDataset> {
    load_csv_with(source, LoadOptions::default())
}

pub fn load_csv_with<R: Read>(source: R, opts: LoadOptions) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::EmptyInput(e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("missing header row".into()));
    }
    let p = check_header(&headers)?;

    struct Row {
        y: f64,
        z: f64,
        x: Vec<f64>,
    }
    let mut cells: BTreeMap<(i64, i64), Row> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::NonNumericField(e.to_string()))?;
        // header is line 1
        let lineno = line + 2;
        if record.len() != headers.len() {
            return Err(Error::NonNumericField(format!(
                "line {lineno}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        let unit = parse_id(&record[0], "unit", lineno)?;
        let time = parse_id(&record[1], "time", lineno)?;
        let y = parse_num(&record[2], "y", lineno)?;
        let z = parse_num(&record[3], "z", lineno)?;
        let x = (0..p)
            .map(|j| parse_num(&record[4 + j], &headers[4 + j], lineno))
            .collect::<Result<Vec<_>>>()?;
        if cells.insert((unit, time), Row { y, z, x }).is_some() {
            return Err(Error::UnbalancedPanel(format!(
                "duplicate cell (unit {unit}, time {time})"
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }

    let units: Vec<i64> = dedup_sorted(cells.keys().map(|&(u, _)| u));
    let mut times: Vec<i64> = cells.keys().map(|&(_, t)| t).collect();
    times.sort_unstable();
    times.dedup();

    let (n, t_len) = (units.len(), times.len());
    if cells.len() != n * t_len {
        let missing = units
            .iter()
            .flat_map(|&u| times.iter().map(move |&t| (u, t)))
            .find(|key| !cells.contains_key(key))
            .expect("some cell is missing");
        return Err(Error::UnbalancedPanel(format!(
            "missing cell (unit {}, time {}); expected {n} x {t_len} cells, found {}",
            missing.0,
            missing.1,
            cells.len()
        )));
    }

    // BTreeMap iteration is (unit, time)-lexicographic, i.e. the stacked order.
    let rows = n * t_len;
    let mut y = DVector::zeros(rows);
    let mut z = DVector::zeros(rows);
    let mut x = DMatrix::zeros(rows, p);
    for (k, row) in cells.values().enumerate() {
        y[k] = row.y;
        z[k] = row.z;
        for (j, v) in row.x.iter().enumerate() {
            x[(k, j)] = *v;
        }
    }
    PanelDataset::new(n, t_len, y, x, z, opts.interval)
}

fn check_header(headers: &csv::StringRecord) -> Result<usize> {
    let fixed = ["unit", "time", "y", "z"];
    if headers.len() < fixed.len() {
        return Err(Error::InvalidShape(format!(
            "header must start with unit,time,y,z; found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    for (i, want) in fixed.iter().enumerate() {
        if &headers[i] != *want {
            return Err(Error::InvalidShape(format!(
                "column {} must be `{want}`, found `{}`",
                i + 1,
                &headers[i]
            )));
        }
    }
    let p = headers.len() - fixed.len();
    for j in 0..p {
        let want = format!("x{}", j + 1);
        if headers[4 + j] != want {
            return Err(Error::InvalidShape(format!(
                "unexpected column `{}` (expected `{want}`)",
                &headers[4 + j]
            )));
        }
    }
    Ok(p)
}

fn parse_num(field: &str, column: &str, line: usize) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonNumericField(format!(
            "line {line}, column `{column}`: `{field}`"
        ))),
    }
}

fn parse_id(field: &str, column: &str, line: usize) -> Result<i64> {
    field.parse::<i64>().map_err(|_| {
        Error::NonNumericField(format!("line {line}, column `{column}`: `{field}` is not an integer id"))
    })
}

fn dedup_sorted(it: impl Iterator<Item = i64>) -> Vec<i64> {
    let mut v: Vec<i64> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Builds `D = [-e_{n-1}, I_{n-1}]^T ⊗ e_T`, the `nT x (n-1)` dummy matrix
/// encoding fixed effects under the sum-to-zero constraint.
pub fn build_dummy_matrix(n: usize, t_len: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::InvalidShape(format!(
            "dummy matrix needs at least two units, got n = {n}"
        )));
    }
    if t_len == 0 {
        return Err(Error::InvalidShape("T must be positive".into()));
    }
    let mut d = DMatrix::zeros(n * t_len, n - 1);
    for t in 0..t_len {
        for j in 0..n - 1 {
            d[(t, j)] = -1.0;
        }
    }
    for i in 1..n {
        for t in 0..t_len {
            d[(i * t_len + t, i - 1)] = 1.0;
        }
    }
    Ok(d)
}

/// Applies `D` to the free effects `(α_2, …, α_n)` without forming `D`.
pub fn apply_dummy(free: &[f64], t_len: usize) -> DVector<f64> {
    let n = free.len() + 1;
    let first = -free.iter().sum::<f64>();
    DVector::from_fn(n * t_len, |k, _| {
        let i = k / t_len;
        if i == 0 {
            first
        } else {
            free[i - 1]
        }
    })
}

/// `(I_n ⊗ e_T) α` for a full effect vector of length `n`.
pub fn stack_effects(alpha: &[f64], t_len: usize) -> DVector<f64> {
    DVector::from_fn(alpha.len() * t_len, |k, _| alpha[k / t_len])
}

/// `Dᵀ v`: per-unit sums of `v` minus the unit-1 sum, one entry per free effect.
pub fn dummy_transpose_apply(v: &[f64], n: usize, t_len: usize) -> DVector<f64> {
    let sums: Vec<f64> = (0..n).map(|i| v[i * t_len..(i + 1) * t_len].iter().sum()).collect();
    DVector::from_fn(n - 1, |j, _| sums[j + 1] - sums[0])
}

/// Summary produced by [`validate`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub n_obs: usize,
    pub p: usize,
    pub z_range: (f64, f64),
    pub warnings: Vec<String>,
    pub info: Vec<String>,
}

/// Share of `z` values allowed within 5% of either interval endpoint before
/// the boundary-concentration warning fires.
const BOUNDARY_SHARE: f64 = 0.5;

pub fn validate(ds: &PanelDataset) -> ValidationReport {
    let (lo, hi) = min_max(ds.z.as_slice());
    let mut warnings = Vec::new();
    let mut info = Vec::new();
    if hi - lo <= 0.0 {
        warnings.push("degenerate smoothing covariate".to_string());
    } else {
        let (c, d) = ds.interval;
        let edge = 0.05 * (d - c);
        let near = ds.z.iter().filter(|&&v| v - c <= edge || d - v <= edge).count();
        if near as f64 > BOUNDARY_SHARE * ds.n_obs() as f64 {
            warnings.push(format!(
                "z values concentrated at boundary: {near} of {} within 5% of an endpoint",
                ds.n_obs()
            ));
        }
    }
    if ds.n < 2 {
        warnings.push("a single unit leaves no identifiable fixed effects".to_string());
    }
    if ds.p() == 0 {
        info.push("pure nonparametric panel model".to_string());
    }
    ValidationReport { n_obs: ds.n_obs(), p: ds.p(), z_range: (lo, hi), warnings, info }
}
