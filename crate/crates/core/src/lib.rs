//! Gauss-Newton-Metropolis sampling for posteriors of the form
//! `p(x) ∝ χ(x) π(x) exp(−‖f(x)‖²/2)`, with optional back-off proposals
//! after rejection.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod diagnostics;
pub mod error;
pub mod gaussian;
pub mod jtest;
pub mod kernel;
pub mod model;
pub mod posterior;
pub mod sampler;

pub use diagnostics::{acor, autocovariance, error_bars, error_bars_2d, quadrature_1d, step_percentages, AcorResult, HistogramResult};
pub use error::{Error, Result};
pub use gaussian::PrecisionGaussian;
pub use jtest::{jtest, JtestDomain, JtestOptions};
pub use kernel::{cubic_minimizer, BackoffMode, BackoffPolicy, CubicData};
pub use model::{Model, ModelEval, ModelHandle};
pub use posterior::{GaussianPrior, PointState};
pub use sampler::{RngState, Sampler, SamplerSnapshot};
