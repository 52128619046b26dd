//! Bundled example problems: model, starting point, default prior and the
//! box used for Jacobian checks.

use gnm_core::model::{default_times, ExpSeries, ExpSeriesArgs, Linear, Model, PerturbedJacobian, Quickstart, Simple2d};
use gnm_core::{GaussianPrior, ModelEval};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    /// The single well with `y = 1, σ = 0.5`.
    Quickstart,
    /// The single well with a deeper default `y = 4`.
    Well,
    /// A well in `x₁` with `x₂` tied to `x₁`.
    Simple2d,
    /// Sum of two decaying exponentials fitted to ten noisy points.
    Expseries,
    /// Affine residual; the Gauss-Newton proposal is the exact posterior.
    Linear,
    /// Quickstart with every Jacobian entry offset by 0.01.
    Corrupted,
}

pub const EXP_TRUE_PARAMS: [f64; 4] = [1.0, 2.5, 0.5, 3.1];
pub const EXP_PRIOR_MEAN: [f64; 4] = [4.0, 2.0, 0.5, 1.0];
pub const EXP_NOISE_SD: f64 = 0.1;
pub const EXP_DATA_SEED: u64 = 2024;

/// Knobs shared by the bundled problems; `None` selects the example's default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemParams {
    pub y: Option<f64>,
    pub sigma: Option<f64>,
    pub data_seed: Option<u64>,
    pub times: Option<Vec<f64>>,
}

pub type BoxedModel = Box<dyn Model + Send>;

pub struct Problem {
    pub kind: ExampleKind,
    pub model: BoxedModel,
    pub dim: usize,
    pub x0: DVector<f64>,
    pub prior: GaussianPrior,
    pub jtest_min: DVector<f64>,
    pub jtest_max: DVector<f64>,
}

fn well(params: &ProblemParams, y: f64) -> Quickstart {
    Quickstart {
        y: params.y.unwrap_or(y),
        sigma: params.sigma.unwrap_or(0.5),
    }
}

pub fn linear_example() -> Linear {
    Linear::new(
        DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 2.0, 1.0, -1.0]),
        DVector::from_vec(vec![1.0, -0.5, 2.0]),
    )
    .expect("static shapes agree")
}

pub fn exp_series_args(params: &ProblemParams) -> Result<ExpSeriesArgs> {
    let times = params.times.clone().unwrap_or_else(|| default_times(10));
    Ok(ExpSeriesArgs::synthetic(
        &EXP_TRUE_PARAMS,
        times,
        EXP_NOISE_SD,
        params.data_seed.unwrap_or(EXP_DATA_SEED),
    )?)
}

fn unit_prior(n: usize) -> GaussianPrior {
    GaussianPrior::new(DVector::zeros(n), DMatrix::identity(n, n)).expect("identity is PSD")
}

impl Problem {
    pub fn build(kind: ExampleKind, params: &ProblemParams) -> Result<Self> {
        let cube = |n: usize, lo: f64, hi: f64| (DVector::from_element(n, lo), DVector::from_element(n, hi));
        let (model, x0, prior, (jtest_min, jtest_max)): (BoxedModel, _, _, _) = match kind {
            ExampleKind::Quickstart => (Box::new(well(params, 1.0)), DVector::from_element(1, 0.5), unit_prior(1), cube(1, -2.0, 2.0)),
            ExampleKind::Well => (Box::new(well(params, 4.0)), DVector::from_element(1, 0.5), unit_prior(1), cube(1, -3.0, 3.0)),
            ExampleKind::Simple2d => {
                let m = Simple2d {
                    y: params.y.unwrap_or(1.0),
                    sigma: params.sigma.unwrap_or(0.5),
                };
                (Box::new(m), DVector::from_element(2, 0.5), unit_prior(2), cube(2, -2.0, 2.0))
            }
            ExampleKind::Expseries => {
                let mean = DVector::from_row_slice(&EXP_PRIOR_MEAN);
                let prior = GaussianPrior::new(mean.clone(), DMatrix::identity(4, 4) * 0.5)?;
                (Box::new(ExpSeries::new(exp_series_args(params)?)), mean, prior, cube(4, 0.1, 5.0))
            }
            ExampleKind::Linear => (Box::new(linear_example()), DVector::zeros(2), unit_prior(2), cube(2, -2.0, 2.0)),
            ExampleKind::Corrupted => {
                let m = PerturbedJacobian {
                    inner: well(params, 1.0),
                    offset: 0.01,
                };
                (Box::new(m), DVector::from_element(1, 0.5), unit_prior(1), cube(1, -2.0, 2.0))
            }
        };
        Ok(Self {
            kind,
            model,
            dim: x0.len(),
            x0,
            prior,
            jtest_min,
            jtest_max,
        })
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<ModelEval> {
        Ok(self.model.evaluate(x)?)
    }
}
