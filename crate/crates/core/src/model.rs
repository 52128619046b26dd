//! The user-model contract and the bundled example models.
//!
//! A model maps a parameter vector `x` (length `n`) to the triple
//! `(χ(x), f(x), ∇f(x))`: the domain indicator, the residual vector of
//! length `m` and the `m × n` Jacobian. All three come from one call.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Result of one model evaluation.
///
/// When `inside` is false the residual and Jacobian carry no meaning and are
/// left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEval {
    pub inside: bool,
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl ModelEval {
    pub fn new(residual: DVector<f64>, jacobian: DMatrix<f64>) -> Self {
        Self {
            inside: true,
            residual,
            jacobian,
        }
    }

    /// A point where the model is undefined (χ = 0).
    pub fn outside() -> Self {
        Self {
            inside: false,
            residual: DVector::zeros(0),
            jacobian: DMatrix::zeros(0, 0),
        }
    }

    /// Builds an evaluation from a numeric indicator: `0` is outside, any
    /// other value inside.
    pub fn from_indicator(chi: f64, residual: DVector<f64>, jacobian: DMatrix<f64>) -> Self {
        if chi == 0.0 {
            Self::outside()
        } else {
            Self::new(residual, jacobian)
        }
    }

    /// ‖f(x)‖².
    pub fn residual_norm_sq(&self) -> f64 {
        self.residual.norm_squared()
    }
}

/// A user model: evaluates `(χ, f, ∇f)` at a parameter vector.
///
/// Implementations report their own faults through
/// [`Error::UserFunctionFailure`].
pub trait Model {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval>;
}

impl<F> Model for F
where
    F: Fn(&DVector<f64>) -> Result<ModelEval>,
{
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        self(x)
    }
}

impl Model for Box<dyn Model + Send> {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        (**self).evaluate(x)
    }
}

/// A model given as a function of `(x, args)` plus its argument bundle.
#[derive(Debug, Clone)]
pub struct FnModel<F, A> {
    func: F,
    args: A,
}

impl<F, A> FnModel<F, A>
where
    F: Fn(&DVector<f64>, &A) -> Result<ModelEval>,
{
    pub fn new(func: F, args: A) -> Self {
        Self { func, args }
    }

    pub fn args(&self) -> &A {
        &self.args
    }
}

impl<F, A> Model for FnModel<F, A>
where
    F: Fn(&DVector<f64>, &A) -> Result<ModelEval>,
{
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        (self.func)(x, &self.args)
    }
}

/// Wraps a model with fixed dimensions and counts every evaluation.
///
/// The residual length is learned from the first evaluation that lands
/// inside the domain; later evaluations must agree with it.
#[derive(Debug, Clone)]
pub struct ModelHandle<M> {
    model: M,
    dim_in: usize,
    dim_out: Option<usize>,
    call_count: u64,
}

impl<M: Model> ModelHandle<M> {
    pub fn new(model: M, dim_in: usize) -> Self {
        Self {
            model,
            dim_in,
            dim_out: None,
            call_count: 0,
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> Option<usize> {
        self.dim_out
    }

    pub fn call_count(&self) -> u64 {
        self.call_count
    }

    pub(crate) fn set_call_count(&mut self, count: u64) {
        self.call_count = count;
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn into_inner(self) -> M {
        self.model
    }

    pub fn evaluate(&mut self, x: &DVector<f64>) -> Result<ModelEval> {
        if x.len() != self.dim_in {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.dim_in,
                found: x.len(),
            });
        }
        self.call_count += 1;
        let eval = self.model.evaluate(x)?;
        if !eval.inside {
            return Ok(eval);
        }
        let m = *self.dim_out.get_or_insert(eval.residual.len());
        if eval.residual.len() != m {
            return Err(Error::DimensionMismatch {
                what: "residual length",
                expected: m,
                found: eval.residual.len(),
            });
        }
        if eval.jacobian.nrows() != m {
            return Err(Error::DimensionMismatch {
                what: "jacobian rows",
                expected: m,
                found: eval.jacobian.nrows(),
            });
        }
        if eval.jacobian.ncols() != self.dim_in {
            return Err(Error::DimensionMismatch {
                what: "jacobian columns",
                expected: self.dim_in,
                found: eval.jacobian.ncols(),
            });
        }
        Ok(eval)
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// The one-dimensional well `f(x) = (x² − y)/σ`.
///
/// With `y = 1, σ = 0.5` this is the quickstart problem; larger `y` deepens
/// the well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quickstart {
    pub y: f64,
    pub sigma: f64,
}

impl Default for Quickstart {
    fn default() -> Self {
        Self { y: 1.0, sigma: 0.5 }
    }
}

impl Model for Quickstart {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        check_len("quickstart parameter", 1, x.len())?;
        let x = x[0];
        Ok(ModelEval::new(
            DVector::from_element(1, (x * x - self.y) / self.sigma),
            DMatrix::from_element(1, 1, 2.0 * x / self.sigma),
        ))
    }
}

/// A two-parameter problem: a well in the first coordinate with the second
/// coordinate tied to the first, `f = ((x₁² − y)/σ, (x₂ − x₁)/σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simple2d {
    pub y: f64,
    pub sigma: f64,
}

impl Default for Simple2d {
    fn default() -> Self {
        Self { y: 1.0, sigma: 0.5 }
    }
}

impl Model for Simple2d {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        check_len("simple2d parameter", 2, x.len())?;
        let s = self.sigma;
        let residual = DVector::from_vec(alloc::vec![(x[0] * x[0] - self.y) / s, (x[1] - x[0]) / s]);
        let jacobian = DMatrix::from_row_slice(2, 2, &[2.0 * x[0] / s, 0.0, -1.0 / s, 1.0 / s]);
        Ok(ModelEval::new(residual, jacobian))
    }
}

/// Affine residual `f(x) = A x − b` with Jacobian `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_len("linear model offset", a.nrows(), b.len())?;
        Ok(Self { a, b })
    }
}

impl Model for Linear {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        check_len("linear model parameter", self.a.ncols(), x.len())?;
        Ok(ModelEval::new(&self.a * x - &self.b, self.a.clone()))
    }
}

/// Data for the sum-of-exponentials model: measurement times, observations
/// and per-observation noise standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpSeriesArgs {
    pub times: Vec<f64>,
    pub data: Vec<f64>,
    pub noise_sd: Vec<f64>,
}

/// `g(t) = Σ wᵢ e^{−λᵢ t}` for `params = (w₁..w_d, λ₁..λ_d)`.
pub fn exp_series_value(params: &[f64], t: f64) -> f64 {
    let d = params.len() / 2;
    (0..d).map(|i| params[i] * libm::exp(-params[d + i] * t)).sum()
}

/// Uniform grid `t_k = 3k/(m−1)`, `k = 0..m`.
pub fn default_times(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => alloc::vec![0.0],
        _ => (0..m).map(|k| 3.0 * k as f64 / (m - 1) as f64).collect(),
    }
}

impl ExpSeriesArgs {
    pub fn new(times: Vec<f64>, data: Vec<f64>, noise_sd: Vec<f64>) -> Result<Self> {
        check_len("exp-series data", times.len(), data.len())?;
        check_len("exp-series noise", times.len(), noise_sd.len())?;
        if noise_sd.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("noise standard deviations must be positive"));
        }
        Ok(Self {
            times,
            data,
            noise_sd,
        })
    }

    /// Synthetic observations `y_k = g(t_k) + ε_k` with `ε_k ~ N(0, noise_sd²)`.
    ///
    /// Deterministic in `seed`; the model's noise levels are set to
    /// `noise_sd` (or 1 when `noise_sd` is zero, so the model stays defined).
    pub fn synthetic(true_params: &[f64], times: Vec<f64>, noise_sd: f64, seed: u64) -> Result<Self> {
        if true_params.is_empty() || !true_params.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument("exp-series parameters must have even, nonzero length"));
        }
        if noise_sd < 0.0 {
            return Err(Error::InvalidArgument("noise standard deviation must be non-negative"));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = times
            .iter()
            .map(|&t| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                exp_series_value(true_params, t) + noise_sd * eps
            })
            .collect();
        let sd = if noise_sd > 0.0 { noise_sd } else { 1.0 };
        let noise = alloc::vec![sd; times.len()];
        Self::new(times, data, noise)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `f_k(x) = (g(t_k, x) − y_k)/σ_k` over parameters `x = (w₁..w_d, λ₁..λ_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpSeries {
    pub args: ExpSeriesArgs,
}

impl ExpSeries {
    pub fn new(args: ExpSeriesArgs) -> Self {
        Self { args }
    }
}

impl Model for ExpSeries {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        let n = x.len();
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                what: "exp-series parameter (must be even)",
                expected: n + n % 2,
                found: n,
            });
        }
        let d = n / 2;
        let m = self.args.len();
        let mut residual = DVector::zeros(m);
        let mut jacobian = DMatrix::zeros(m, n);
        for k in 0..m {
            let t = self.args.times[k];
            let s = self.args.noise_sd[k];
            let mut g = 0.0;
            for i in 0..d {
                let e = libm::exp(-x[d + i] * t);
                g += x[i] * e;
                jacobian[(k, i)] = e / s;
                jacobian[(k, d + i)] = -x[i] * t * e / s;
            }
            residual[k] = (g - self.args.data[k]) / s;
        }
        Ok(ModelEval::new(residual, jacobian))
    }
}

/// Wraps a model and adds a constant to every Jacobian entry. Used to
/// demonstrate Jacobian verification failures.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedJacobian<M> {
    pub inner: M,
    pub offset: f64,
}

impl<M: Model> Model for PerturbedJacobian<M> {
    fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        let mut eval = self.inner.evaluate(x)?;
        if eval.inside {
            eval.jacobian.add_scalar_mut(self.offset);
        }
        Ok(eval)
    }
}

/// Formats a user-side failure message.
pub fn user_failure(msg: impl Into<String>) -> Error {
    Error::UserFunctionFailure(msg.into())
}
