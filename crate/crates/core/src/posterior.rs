//! Unnormalized log-posterior and the Gauss-Newton proposal.
//!
//! The target is `p(x) ∝ χ(x) π(x) exp(−‖f(x)‖²/2)` with a Gaussian prior
//! `π(x) ∝ exp(−(x−m)ᵀH(x−m)/2)`. Normalizing constants are dropped
//! everywhere except inside [`PrecisionGaussian`], whose densities enter
//! acceptance ratios with differing determinants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::PrecisionGaussian;
use crate::model::ModelEval;

const PSD_TOL: f64 = 1e-10;

/// Gaussian prior with mean `m` and precision `H`. `H = 0` is the flat
/// (improper) prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if precision.nrows() != n || precision.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "prior precision",
                expected: n,
                found: if precision.nrows() != n { precision.nrows() } else { precision.ncols() },
            });
        }
        if precision.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("prior must be finite"));
        }
        let scale = precision.amax().max(1.0);
        if (&precision - precision.transpose()).amax() > PSD_TOL * scale {
            return Err(Error::InvalidArgument("prior precision is not symmetric"));
        }
        let precision = (&precision + precision.transpose()) * 0.5;
        if n > 0 {
            let min_eig = precision.clone().symmetric_eigenvalues().min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::NotPsd(min_eig));
            }
        }
        Ok(Self { mean, precision })
    }

    pub fn flat(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            precision: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn is_flat(&self) -> bool {
        self.precision.iter().all(|&v| v == 0.0)
    }

    /// `−½ (x−m)ᵀ H (x−m)`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        -0.5 * d.dot(&(&self.precision * &d))
    }
}

/// `log p(x)` up to a global constant, or `−∞` outside the domain.
pub fn log_posterior(prior: &GaussianPrior, eval: &ModelEval, x: &DVector<f64>) -> f64 {
    if !eval.inside {
        return f64::NEG_INFINITY;
    }
    prior.log_density(x) - 0.5 * eval.residual_norm_sq()
}

/// The Gauss-Newton proposal anchored at `x`: precision `H + JᵀJ` and mean
/// `P⁻¹(Hm − Jᵀf + JᵀJ x)`.
///
/// The mean is computed in the equivalent form `x + P⁻¹(H(m − x) − Jᵀf)`.
pub fn gn_proposal(prior: &GaussianPrior, eval: &ModelEval, x: &DVector<f64>) -> Result<PrecisionGaussian> {
    if !eval.inside {
        return Err(Error::InvalidArgument("proposal requested outside the domain"));
    }
    let j = &eval.jacobian;
    let precision = prior.precision() + j.tr_mul(j);
    let rhs = prior.precision() * (prior.mean() - x) - j.tr_mul(&eval.residual);
    let chol = precision.clone().cholesky().ok_or(Error::SingularProposal)?;
    let mean = x + chol.solve(&rhs);
    PrecisionGaussian::from_precision(mean, precision).map_err(|_| Error::SingularProposal)
}

/// A point together with its cached model evaluation, log-posterior and
/// Gauss-Newton proposal. Every point costs exactly one model call.
#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    pub x: DVector<f64>,
    pub eval: ModelEval,
    pub log_post: f64,
    /// `None` outside the domain or when `H + JᵀJ` is singular.
    pub proposal: Option<PrecisionGaussian>,
}

impl PointState {
    pub fn new(prior: &GaussianPrior, x: DVector<f64>, eval: ModelEval) -> Self {
        let log_post = log_posterior(prior, &eval, &x);
        let proposal = if eval.inside {
            gn_proposal(prior, &eval, &x).ok()
        } else {
            None
        };
        Self {
            x,
            eval,
            log_post,
            proposal,
        }
    }

    pub fn inside(&self) -> bool {
        self.eval.inside
    }

    /// The proposal, or [`Error::SingularProposal`] for an inside point whose
    /// precision failed to factor.
    pub fn proposal(&self) -> Result<&PrecisionGaussian> {
        match &self.proposal {
            Some(p) => Ok(p),
            None if !self.inside() => Err(Error::InvalidArgument("point is outside the domain")),
            None => Err(Error::SingularProposal),
        }
    }
}
