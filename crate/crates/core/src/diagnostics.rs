//! Post-run analysis: binned marginals with Poisson error bars,
//! integrated autocorrelation time, autocovariance curves and back-off
//! stage percentages.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-dimension marginal histograms, each `dim × n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramResult {
    pub centers: DMatrix<f64>,
    pub density: DMatrix<f64>,
    pub err: DMatrix<f64>,
}

fn bin_index(x: f64, lo: f64, hi: f64, n_bins: usize) -> Option<usize> {
    if !(x >= lo && x <= hi) {
        return None;
    }
    let b = ((x - lo) / (hi - lo) * n_bins as f64) as usize;
    Some(b.min(n_bins - 1))
}

fn check_chain(chain: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !chain.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            what: "chain row length",
            expected: dim,
            found: chain.len(),
        });
    }
    match chain.len() / dim {
        0 => Err(Error::EmptyChain),
        n => Ok(n),
    }
}

/// Bins each coordinate of a row-major chain over `[d_min_j, d_max_j]`.
///
/// `density = c / (N w)` and `err = √c / (N w)` for count `c`, total rows
/// `N` and bin width `w`. Samples outside the range are dropped.
pub fn error_bars(chain: &[f64], dim: usize, n_bins: usize, d_min: &[f64], d_max: &[f64]) -> Result<HistogramResult> {
    let n = check_chain(chain, dim)?;
    if d_min.len() != dim || d_max.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "histogram range",
            expected: dim,
            found: if d_min.len() != dim { d_min.len() } else { d_max.len() },
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("number of bins must be positive"));
    }
    if d_min.iter().zip(d_max).any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("histogram range must satisfy d_min < d_max"));
    }
    let mut counts = DMatrix::<f64>::zeros(dim, n_bins);
    for row in chain.chunks_exact(dim) {
        for (j, &x) in row.iter().enumerate() {
            if let Some(b) = bin_index(x, d_min[j], d_max[j], n_bins) {
                counts[(j, b)] += 1.0;
            }
        }
    }
    let mut centers = DMatrix::zeros(dim, n_bins);
    let mut density = DMatrix::zeros(dim, n_bins);
    let mut err = DMatrix::zeros(dim, n_bins);
    for j in 0..dim {
        let w = (d_max[j] - d_min[j]) / n_bins as f64;
        let norm = n as f64 * w;
        for b in 0..n_bins {
            let c = counts[(j, b)];
            centers[(j, b)] = d_min[j] + (b as f64 + 0.5) * w;
            density[(j, b)] = c / norm;
            err[(j, b)] = libm::sqrt(c) / norm;
        }
    }
    Ok(HistogramResult { centers, density, err })
}

/// Joint histogram of coordinates `(i, j)`; matrices are indexed
/// `[bin_i, bin_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub centers_i: Vec<f64>,
    pub centers_j: Vec<f64>,
    pub density: DMatrix<f64>,
    pub err: DMatrix<f64>,
}

pub fn error_bars_2d(
    chain: &[f64],
    dim: usize,
    coords: (usize, usize),
    n_bins: usize,
    range_i: (f64, f64),
    range_j: (f64, f64),
) -> Result<Histogram2d> {
    let n = check_chain(chain, dim)?;
    let (ci, cj) = coords;
    if ci >= dim || cj >= dim {
        return Err(Error::DimensionMismatch {
            what: "marginal coordinate",
            expected: dim,
            found: ci.max(cj),
        });
    }
    if n_bins == 0 || !(range_i.0 < range_i.1) || !(range_j.0 < range_j.1) {
        return Err(Error::InvalidArgument("invalid 2D histogram specification"));
    }
    let mut counts = DMatrix::<f64>::zeros(n_bins, n_bins);
    for row in chain.chunks_exact(dim) {
        if let (Some(a), Some(b)) = (
            bin_index(row[ci], range_i.0, range_i.1, n_bins),
            bin_index(row[cj], range_j.0, range_j.1, n_bins),
        ) {
            counts[(a, b)] += 1.0;
        }
    }
    let wi = (range_i.1 - range_i.0) / n_bins as f64;
    let wj = (range_j.1 - range_j.0) / n_bins as f64;
    let norm = n as f64 * wi * wj;
    Ok(Histogram2d {
        centers_i: (0..n_bins).map(|b| range_i.0 + (b as f64 + 0.5) * wi).collect(),
        centers_j: (0..n_bins).map(|b| range_j.0 + (b as f64 + 0.5) * wj).collect(),
        density: counts.map(|c| c / norm),
        err: counts.map(|c| libm::sqrt(c) / norm),
    })
}

/// Integrated autocorrelation time of a scalar series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcorResult {
    pub tau: f64,
    pub mean: f64,
    /// Standard error of the mean, `√(τ var / N)`.
    pub sigma: f64,
}

impl AcorResult {
    /// Effective sample size `N / τ`.
    pub fn effective_size(&self, n: usize) -> f64 {
        n as f64 / self.tau
    }
}

fn mean(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

fn lag_covariance(centered: &[f64], t: usize) -> f64 {
    let n = centered.len();
    let s: f64 = centered[..n - t].iter().zip(&centered[t..]).map(|(a, b)| a * b).sum();
    s / (n - t) as f64
}

/// `C(t) = 1/(N−t) Σ (x_s − x̄)(x_{s+t} − x̄)` for `t = 0..=max_lag`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag >= series.len() {
        return Err(Error::LagTooLarge {
            lag: max_lag,
            len: series.len(),
        });
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    Ok((0..=max_lag).map(|t| lag_covariance(&centered, t)).collect())
}

/// Autocorrelation time with a self-consistent window: the sum
/// `τ = 1 + 2 Σ_{t≤T} ρ(t)` stops at the first `T ≥ k τ`.
///
/// Requires at least `100 k` points; the window must close below `N/10`.
/// A constant series yields `τ = 1, sigma = 0`.
pub fn acor(series: &[f64], k: usize) -> Result<AcorResult> {
    let n = series.len();
    let min = 100 * k.max(1);
    if n < min {
        return Err(Error::SeriesTooShort { len: n, min });
    }
    let m = mean(series);
    let centered: Vec<f64> = series.iter().map(|x| x - m).collect();
    let c0 = lag_covariance(&centered, 0);
    if c0 == 0.0 {
        return Ok(AcorResult {
            tau: 1.0,
            mean: m,
            sigma: 0.0,
        });
    }
    let limit = n / 10;
    let mut tau = 1.0;
    let mut t = 0;
    loop {
        t += 1;
        if t >= limit {
            return Err(Error::NonConvergentWindow(limit));
        }
        tau += 2.0 * lag_covariance(&centered, t) / c0;
        if t as f64 >= k as f64 * tau {
            break;
        }
    }
    Ok(AcorResult {
        tau,
        mean: m,
        sigma: libm::sqrt(tau * c0 / n as f64),
    })
}

/// Fraction of transitions per stage from `(stage, count)` pairs.
pub fn step_percentages(step_count: &[(i32, u64)]) -> Vec<(i32, f64)> {
    let total: u64 = step_count.iter().map(|(_, c)| c).sum();
    step_count
        .iter()
        .map(|&(s, c)| (s, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect()
}

/// Trapezoid-rule density on a uniform grid, normalized to unit mass on
/// `[lo, hi]`. Returns `(grid, density)`.
pub fn quadrature_1d<F: FnMut(f64) -> f64>(
    mut log_density: F,
    lo: f64,
    hi: f64,
    n_points: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_points < 101 {
        return Err(Error::InvalidArgument("quadrature needs at least 101 points"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument("quadrature interval must satisfy lo < hi"));
    }
    let h = (hi - lo) / (n_points - 1) as f64;
    let grid: Vec<f64> = (0..n_points).map(|i| if i == n_points - 1 { hi } else { lo + i as f64 * h }).collect();
    let logs: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
    if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NonFiniteDensity);
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return Err(Error::NonFiniteDensity);
    }
    let mut dens: Vec<f64> = logs.iter().map(|l| libm::exp(l - peak)).collect();
    let interior: f64 = dens[1..n_points - 1].iter().sum();
    let mass = h * (interior + 0.5 * (dens[0] + dens[n_points - 1]));
    for d in &mut dens {
        *d /= mass;
    }
    Ok((grid, dens))
}

/// Mass of a trapezoid-rule density in each of `n_bins` equal bins of the
/// grid, for grids whose interval count is a multiple of `n_bins`.
pub fn bin_masses(grid: &[f64], density: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    let intervals = grid.len().saturating_sub(1);
    if n_bins == 0 || intervals == 0 || !intervals.is_multiple_of(n_bins) || density.len() != grid.len() {
        return Err(Error::InvalidArgument("grid intervals must be a multiple of the bin count"));
    }
    let per = intervals / n_bins;
    let mut out = vec![0.0; n_bins];
    for (b, slot) in out.iter_mut().enumerate() {
        for i in b * per..(b + 1) * per {
            *slot += 0.5 * (grid[i + 1] - grid[i]) * (density[i] + density[i + 1]);
        }
    }
    Ok(out)
}
