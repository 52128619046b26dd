//! Randomized check of a model's Jacobian against symmetric differences.
//!
//! For each of `n_points` uniform points in a box, the symmetric-difference
//! Jacobian is compared to the model's Jacobian in an entrywise p-norm. The
//! perturbation starts at `dx` times the box width and shrinks by `r` per
//! stage until the error is at most `eps_max` or `l_max` shrinks are used up.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelHandle};

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JtestOptions {
    /// Initial perturbation relative to the box width.
    pub dx: f64,
    /// Number of test points.
    pub n_points: usize,
    pub eps_max: f64,
    /// Norm order, `≥ 1` (`f64::INFINITY` for the max norm).
    pub p: f64,
    pub l_max: usize,
    /// Shrink ratio in `(0, 1)`.
    pub r: f64,
}

impl Default for JtestOptions {
    fn default() -> Self {
        Self {
            dx: 2e-4,
            n_points: 1000,
            eps_max: 1e-4,
            p: 2.0,
            l_max: 50,
            r: 0.5,
        }
    }
}

impl JtestOptions {
    fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || !self.dx.is_finite() {
            return Err(Error::InvalidArgument("dx must be positive"));
        }
        if !(self.eps_max > 0.0) {
            return Err(Error::InvalidArgument("eps_max must be positive"));
        }
        if !(self.p >= 1.0) {
            return Err(Error::InvalidArgument("norm order must be at least 1"));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::InvalidArgument("shrink ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The open box `x_min < x < x_max` from which test points are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct JtestDomain {
    x_min: DVector<f64>,
    x_max: DVector<f64>,
}

impl JtestDomain {
    pub fn new(x_min: DVector<f64>, x_max: DVector<f64>) -> Result<Self> {
        if x_min.len() != x_max.len() {
            return Err(Error::DimensionMismatch {
                what: "jtest box corners",
                expected: x_min.len(),
                found: x_max.len(),
            });
        }
        if x_min.is_empty() || x_min.iter().zip(x_max.iter()).any(|(lo, hi)| !(lo < hi) || !hi.is_finite() || !lo.is_finite()) {
            return Err(Error::InvalidArgument("jtest box must be nonempty"));
        }
        Ok(Self { x_min, x_max })
    }

    pub fn dim(&self) -> usize {
        self.x_min.len()
    }

    pub fn x_min(&self) -> &DVector<f64> {
        &self.x_min
    }

    pub fn x_max(&self) -> &DVector<f64> {
        &self.x_max
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = (self.x_min[i], self.x_max[i]);
            loop {
                let x = lo + (hi - lo) * rng.random::<f64>();
                if x > lo && x < hi {
                    break x;
                }
            }
        })
    }
}

/// Entrywise p-norm of a matrix.
pub fn entrywise_norm(m: &DMatrix<f64>, p: f64) -> f64 {
    if p == f64::INFINITY {
        return m.amax();
    }
    if p == 2.0 {
        return m.norm();
    }
    let s: f64 = m.iter().map(|v| libm::pow(v.abs(), p)).sum();
    libm::pow(s, 1.0 / p)
}

enum PointOutcome {
    Passed,
    Failed(f64),
    Outside,
}

fn check_point<M: Model>(
    model: &mut ModelHandle<M>,
    x: &DVector<f64>,
    delta0: &DVector<f64>,
    opts: &JtestOptions,
) -> Result<PointOutcome> {
    let base = model.evaluate(x)?;
    if !base.inside {
        return Ok(PointOutcome::Outside);
    }
    let n = x.len();
    let mut numeric = DMatrix::zeros(base.residual.len(), n);
    let mut eps = f64::INFINITY;
    let mut scale = 1.0;
    for _ in 0..=opts.l_max {
        for j in 0..n {
            let h = delta0[j] * scale;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fp = model.evaluate(&xp)?;
            if !fp.inside {
                return Ok(PointOutcome::Outside);
            }
            let fm = model.evaluate(&xm)?;
            if !fm.inside {
                return Ok(PointOutcome::Outside);
            }
            numeric.set_column(j, &((fp.residual - fm.residual) / (2.0 * h)));
        }
        eps = entrywise_norm(&(&numeric - &base.jacobian), opts.p);
        if eps <= opts.eps_max {
            return Ok(PointOutcome::Passed);
        }
        scale *= opts.r;
    }
    Ok(PointOutcome::Failed(eps))
}

/// Returns `0` when every test point converges, otherwise the final error at
/// the first point that does not.
pub fn jtest<M: Model, R: Rng + ?Sized>(
    model: &mut ModelHandle<M>,
    domain: &JtestDomain,
    opts: &JtestOptions,
    rng: &mut R,
) -> Result<f64> {
    opts.validate()?;
    if domain.dim() != model.dim_in() {
        return Err(Error::DimensionMismatch {
            what: "jtest box",
            expected: model.dim_in(),
            found: domain.dim(),
        });
    }
    let delta0: DVector<f64> = (domain.x_max() - domain.x_min()) * opts.dx;
    for _ in 0..opts.n_points {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let x = domain.draw(rng);
            match check_point(model, &x, &delta0, opts)? {
                PointOutcome::Passed => break,
                PointOutcome::Failed(eps) => return Ok(eps),
                PointOutcome::Outside if attempts >= MAX_REDRAWS => {
                    return Err(Error::PointOutsideDomain(attempts));
                }
                PointOutcome::Outside => {}
            }
        }
    }
    Ok(0.0)
}

/// Symmetric-difference Jacobian at `x` with per-coordinate steps `h`.
pub fn numeric_jacobian<M: Model>(model: &M, x: &DVector<f64>, h: &[f64]) -> Result<DMatrix<f64>> {
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(x.len());
    for (j, &hj) in h.iter().enumerate().take(x.len()) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += hj;
        xm[j] -= hj;
        let fp = model.evaluate(&xp)?;
        let fm = model.evaluate(&xm)?;
        if !fp.inside || !fm.inside {
            return Err(Error::PointOutsideDomain(1));
        }
        cols.push((fp.residual - fm.residual) / (2.0 * hj));
    }
    Ok(DMatrix::from_columns(&cols))
}
