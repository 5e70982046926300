//! On-disk formats.
//!
//! Curves and bands are CSV with a header row and numbers in shortest
//! round-trip decimal form. Every file written next to a `--out` target gets a
//! `<stem>.manifest.json` describing how it was produced.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use panel_scb::scb_asymptotic::{BandMethod, BandResult};
use panel_scb::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const BAND_HEADER: [&str; 4] = ["z", "center", "lower", "upper"];

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes named columns of equal length.
pub fn write_columns<W: Write>(sink: W, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.len());
    if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
        return Err(Error::LengthMismatch { expected: rows, got: bad.len() });
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header).map_err(csv_err)?;
    for r in 0..rows {
        w.write_record(columns.iter().map(|c| num(c[r]))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_columns`], checking the header.
pub fn read_columns<R: Read>(source: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(source);
    let found: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::InvalidShape(format!("expected header {header:?}, found {found:?}")));
    }
    let mut cols = vec![Vec::new(); header.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (j, field) in rec.iter().enumerate() {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::NonNumericField(format!("row {}, column {}: {field:?}", line + 1, header[j])))?;
            cols[j].push(v);
        }
    }
    Ok(cols)
}

/// Band fields that do not fit in the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMeta {
    pub alpha: f64,
    pub method: BandMethod,
    pub critical: f64,
    pub h: f64,
    pub h_star: Option<f64>,
    pub warnings: Vec<String>,
}

impl BandMeta {
    pub fn of(b: &BandResult) -> Self {
        Self {
            alpha: b.alpha,
            method: b.method,
            critical: b.critical,
            h: b.h,
            h_star: b.h_star,
            warnings: b.warnings.clone(),
        }
    }
}

pub fn write_band<W: Write>(sink: W, b: &BandResult) -> Result<()> {
    write_columns(sink, &BAND_HEADER, &[&b.grid, &b.center, &b.lower, &b.upper])
}

/// Rebuilds a band from its CSV and the metadata stored in its manifest.
pub fn read_band<R: Read>(source: R, meta: &BandMeta) -> Result<BandResult> {
    let mut cols = read_columns(source, &BAND_HEADER)?.into_iter();
    let (grid, center, lower, upper) = (
        cols.next().unwrap_or_default(),
        cols.next().unwrap_or_default(),
        cols.next().unwrap_or_default(),
        cols.next().unwrap_or_default(),
    );
    Ok(BandResult {
        grid,
        center,
        lower,
        upper,
        alpha: meta.alpha,
        method: meta.method,
        critical: meta.critical,
        h: meta.h,
        h_star: meta.h_star,
        warnings: meta.warnings.clone(),
    })
}

/// Reads the band at `csv_path` together with its manifest.
pub fn read_band_file(csv_path: &Path) -> Result<BandResult> {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(manifest_path(csv_path))?)
        .map_err(|e| Error::Io(format!("manifest: {e}")))?;
    let meta = manifest.band.ok_or_else(|| Error::InvalidShape("manifest carries no band metadata".into()))?;
    read_band(fs::File::open(csv_path)?, &meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every flag after defaults were applied.
    pub flags: serde_json::Map<String, serde_json::Value>,
    pub seeds: Vec<u64>,
    pub version: String,
    /// SHA-256 of the input file, hex.
    pub input_digest: Option<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `dir/stem.ext` -> `dir/stem.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
