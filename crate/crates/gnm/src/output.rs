//! Plot-ready CSV and JSON files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gnm_core::diagnostics::{Histogram2d, HistogramResult};
use serde::Serialize;

use crate::error::{io_err, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Row-major chain with header `x1,...,xn`.
pub fn chain_csv(chain: &[f64], dim: usize) -> String {
    let mut out = (1..=dim).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in chain.chunks_exact(dim) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_chain(path: &Path, chain: &[f64], dim: usize) -> Result<()> {
    write_file(path, &chain_csv(chain, dim))
}

/// Reads a chain written by [`write_chain`].
pub fn read_chain(path: &Path) -> Result<(usize, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let dim = lines.next().map_or(0, |h| h.split(',').count());
    let mut chain = Vec::new();
    for line in lines {
        for cell in line.split(',') {
            let v = cell
                .parse()
                .map_err(|_| crate::error::GnmError::Config(format!("bad number `{cell}` in {}", path.display())))?;
            chain.push(v);
        }
    }
    Ok((dim, chain))
}

/// One file per coordinate, header `center,density,err`.
pub fn histogram_csv(h: &HistogramResult, coord: usize) -> String {
    let mut out = String::from("center,density,err\n");
    for b in 0..h.centers.ncols() {
        writeln!(
            out,
            "{},{},{}",
            fmt_f64(h.centers[(coord, b)]),
            fmt_f64(h.density[(coord, b)]),
            fmt_f64(h.err[(coord, b)])
        )
        .unwrap();
    }
    out
}

pub fn write_histograms(dir: &Path, suffix: &str, h: &HistogramResult) -> Result<()> {
    for j in 0..h.centers.nrows() {
        write_file(&dir.join(format!("histogram_x{}{suffix}.csv", j + 1)), &histogram_csv(h, j))?;
    }
    Ok(())
}

/// Header `ci,cj,density,err`, one line per cell.
pub fn marginal_csv(h: &Histogram2d) -> String {
    let mut out = String::from("ci,cj,density,err\n");
    for (a, ci) in h.centers_i.iter().enumerate() {
        for (b, cj) in h.centers_j.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(*ci),
                fmt_f64(*cj),
                fmt_f64(h.density[(a, b)]),
                fmt_f64(h.err[(a, b)])
            )
            .unwrap();
        }
    }
    out
}

pub fn write_marginal(path: &Path, h: &Histogram2d) -> Result<()> {
    write_file(path, &marginal_csv(h))
}

/// Header `x,density`.
pub fn write_quadrature(path: &Path, grid: &[f64], density: &[f64]) -> Result<()> {
    let mut out = String::from("x,density\n");
    for (x, d) in grid.iter().zip(density) {
        writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*d)).unwrap();
    }
    write_file(path, &out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSummary {
    pub mean: f64,
    /// `null` when the autocorrelation window did not close.
    pub tau: Option<f64>,
    pub ess: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub example: String,
    pub seed: u64,
    pub policy: String,
    pub max_steps: usize,
    pub factor: f64,
    /// Rows in the written chain, after burn-in.
    pub n_samples: u64,
    pub burned: u64,
    pub n_accepted: u64,
    /// `n_accepted / (n_samples + burned)`.
    pub accept_rate: f64,
    pub call_count: u64,
    pub step_count: std::collections::BTreeMap<String, u64>,
    pub step_fraction: std::collections::BTreeMap<String, f64>,
    pub coordinates: Vec<CoordinateSummary>,
    pub warnings: Vec<String>,
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(s).expect("summary is serializable");
    text.push('\n');
    write_file(path, &text)
}
