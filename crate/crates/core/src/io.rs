//! Binary field snapshots and CSV reports.
//!
//! Snapshot layout: `b"BQF1"`, one `u8` dimension, one little-endian `u32`
//! per axis with the point count, then interleaved little-endian `f64`
//! real and imaginary parts in site order. Every writer refuses
//! non-finite values so output directories never contain NaN or Inf.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::diagnostics::{EstimateReport, IdentityCheck};
use crate::error::{Error, Result};
use crate::grid::{Domain, SpectralField, SpectralGrid};
use crate::linear::LinearDiagnostics;
use crate::nonlinear::{Termination, WindowRecord};
use crate::norms::NormSuite;

pub const MAGIC: &[u8; 4] = b"BQF1";

/// Decoded snapshot, physical values in site order.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub points: Vec<u32>,
    pub values: Vec<Complex64>,
}

impl Snapshot {
    pub fn into_field(self, grid: Arc<SpectralGrid>) -> Result<SpectralField> {
        let pts: Vec<u32> = grid.points().iter().map(|&p| p as u32).collect();
        if pts != self.points {
            return Err(Error::Snapshot(format!(
                "snapshot has points {:?}, grid has {:?}",
                self.points, pts
            )));
        }
        SpectralField::new(grid, self.values, Domain::Physical)
    }
}

fn check_finite(values: &[Complex64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_numbers(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn encode_snapshot(field: &SpectralField) -> Result<Vec<u8>> {
    let field = match field.domain() {
        Domain::Physical => field.clone(),
        Domain::Frequency => field.to_physical()?,
    };
    check_finite(field.values(), "snapshot")?;
    let points = field.grid().points();
    let mut out = Vec::with_capacity(5 + 4 * points.len() + 16 * field.values().len());
    out.extend_from_slice(MAGIC);
    out.push(points.len() as u8);
    for &p in points {
        out.extend_from_slice(&(p as u32).to_le_bytes());
    }
    for v in field.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::Snapshot("missing BQF1 magic".into()));
    }
    let dim = bytes[4] as usize;
    if !(1..=3).contains(&dim) {
        return Err(Error::Snapshot(format!("dimension {dim}")));
    }
    let header = 5 + 4 * dim;
    if bytes.len() < header {
        return Err(Error::Snapshot("truncated header".into()));
    }
    let points: Vec<u32> = (0..dim)
        .map(|d| u32::from_le_bytes(bytes[5 + 4 * d..9 + 4 * d].try_into().expect("four bytes")))
        .collect();
    let count = points.iter().try_fold(1usize, |acc, &p| acc.checked_mul(p as usize));
    let count = count.ok_or_else(|| Error::Snapshot("point count overflows".into()))?;
    if bytes.len() != header + 16 * count {
        return Err(Error::Snapshot(format!(
            "expected {} payload bytes, found {}",
            16 * count,
            bytes.len() - header
        )));
    }
    let values = bytes[header..]
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().expect("eight bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("eight bytes")),
            )
        })
        .collect();
    Ok(Snapshot { points, values })
}

pub fn write_snapshot(path: &Path, field: &SpectralField) -> Result<()> {
    let bytes = encode_snapshot(field)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

/// One row of `norms.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRow {
    pub t: f64,
    pub linf_u: f64,
    pub lp_u: f64,
    pub ysp_u: f64,
    pub linf_ut: f64,
    pub lp_ut: f64,
    pub ysp_ut: f64,
}

impl NormRow {
    pub fn from_fields(suite: &NormSuite, t: f64, u: &SpectralField, ut: &SpectralField) -> Result<Self> {
        Ok(Self {
            t,
            linf_u: suite.linf(u)?,
            lp_u: suite.lp(u)?,
            ysp_u: suite.ysp(u)?,
            linf_ut: suite.linf(ut)?,
            lp_ut: suite.lp(ut)?,
            ysp_ut: suite.ysp(ut)?,
        })
    }

    fn values(&self) -> [f64; 7] {
        [
            self.t,
            self.linf_u,
            self.lp_u,
            self.ysp_u,
            self.linf_ut,
            self.lp_ut,
            self.ysp_ut,
        ]
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

pub fn write_norms_csv(path: &Path, rows: &[NormRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            check_numbers(&r.values(), "norms")?;
            Ok(r.values().iter().map(|&v| num(v)).collect())
        })
        .collect::<Result<_>>()?;
    write_csv(
        path,
        &["t", "linf_u", "lp_u", "ysp_u", "linf_ut", "lp_ut", "ysp_ut"],
        &body,
    )
}

pub fn write_diagnostics_csv(path: &Path, d: &LinearDiagnostics) -> Result<()> {
    let values = [d.residual_u, d.residual_ut, d.min_det, d.margin];
    check_numbers(&values, "diagnostics")?;
    let row = vec![
        num(d.residual_u),
        num(d.residual_ut),
        num(d.min_det),
        num(d.margin),
        d.duhamel_nodes.to_string(),
        d.duhamel_converged.to_string(),
        d.outside_hypotheses.to_string(),
    ];
    write_csv(
        path,
        &[
            "residual_u",
            "residual_ut",
            "min_abs_det",
            "margin",
            "duhamel_nodes",
            "duhamel_converged",
            "outside_hypotheses",
        ],
        &[row],
    )
}

pub fn write_run_csv(path: &Path, windows: &[WindowRecord]) -> Result<()> {
    let body: Vec<Vec<String>> = windows
        .iter()
        .map(|w| {
            check_numbers(&[w.t_start, w.length, w.monitor, w.m], "run record")?;
            let ratio = w.final_ratio().filter(|r| r.is_finite());
            Ok(vec![
                w.index.to_string(),
                num(w.t_start),
                num(w.length),
                w.iterations.to_string(),
                ratio.map(num).unwrap_or_default(),
                num(w.monitor),
                w.retries.to_string(),
            ])
        })
        .collect::<Result<_>>()?;
    write_csv(
        path,
        &[
            "window",
            "t_start",
            "t_w",
            "iterations",
            "final_ratio",
            "monitor",
            "retries",
        ],
        &body,
    )
}

/// `key = value` lines describing how a nonlinear run ended.
pub fn termination_record(termination: &Termination, windows: usize, t_end: f64) -> String {
    let mut out = format!(
        "reason = {}\nwindows = {windows}\nt_end = {}\n",
        termination.label(),
        num(t_end)
    );
    if let Termination::BlowUpDetected {
        crossing_time,
        monitor,
        detail,
    } = termination
    {
        if let Some(t) = crossing_time {
            out.push_str(&format!("crossing_time = {}\n", num(*t)));
        }
        if monitor.is_finite() {
            out.push_str(&format!("monitor = {}\n", num(*monitor)));
        } else {
            out.push_str("monitor = unbounded\n");
        }
        out.push_str(&format!("detail = {}\n", detail.replace('\n', " ")));
    }
    out
}

pub fn write_estimate_csv(path: &Path, report: &EstimateReport) -> Result<()> {
    let body: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            if r.skipped.is_none() {
                check_numbers(&[r.lhs, r.rhs, r.ratio, r.refined_ratio], "estimate ratios")?;
            }
            Ok(vec![
                r.index.to_string(),
                num(r.lhs),
                num(r.rhs),
                num(r.ratio),
                num(r.refined_ratio),
                r.skipped.clone().unwrap_or_default(),
            ])
        })
        .collect::<Result<_>>()?;
    write_csv(
        path,
        &["trial", "lhs", "rhs", "ratio", "refined_ratio", "skipped"],
        &body,
    )
}

pub fn write_identity_csv(path: &Path, checks: &[IdentityCheck]) -> Result<()> {
    let body: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            check_numbers(&[c.max_error], "identity errors")?;
            Ok(vec![
                c.name.clone(),
                num(c.max_error),
                num(c.tolerance),
                if c.passed() { "PASS" } else { "FAIL" }.to_string(),
            ])
        })
        .collect::<Result<_>>()?;
    write_csv(path, &["check", "max_error", "tolerance", "status"], &body)
}

/// Generic numeric table.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            check_numbers(r, "table")?;
            Ok(r.iter().map(|&v| num(v)).collect())
        })
        .collect::<Result<_>>()?;
    write_csv(path, header, &body)
}
