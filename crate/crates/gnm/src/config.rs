use std::path::PathBuf;

use gnm_core::kernel::BackoffPolicy;
use gnm_core::GaussianPrior;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GnmError, Result};
use crate::problems::{ExampleKind, Problem, ProblemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackoffArg {
    None,
    Static,
    Dynamic,
}

/// Prior precision given as `"flat"` or a row-major list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrecisionSpec {
    Named(String),
    Entries(Vec<f64>),
}

impl std::str::FromStr for PrecisionSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("flat") {
            return Ok(Self::Named("flat".into()));
        }
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Self::Entries)
    }
}

/// Everything `gnm sample` needs. Deserialized from `--config` files, where
/// every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub example: ExampleKind,
    pub samples: usize,
    pub burn: usize,
    pub divs: usize,
    pub visual: bool,
    pub seed: u64,
    pub bins: usize,
    /// Histogram range applied to every coordinate.
    pub range: Option<(f64, f64)>,
    /// Per-coordinate histogram bounds; override `range`.
    pub d_min: Option<Vec<f64>>,
    pub d_max: Option<Vec<f64>>,
    pub backoff: BackoffArg,
    pub max_steps: usize,
    /// Static dilation, or the dynamic fallback.
    pub factor: Option<f64>,
    pub prior_mean: Option<Vec<f64>>,
    pub prior_precision: Option<PrecisionSpec>,
    pub x0: Option<Vec<f64>>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub y: Option<f64>,
    pub sigma: Option<f64>,
    pub data_seed: Option<u64>,
    pub times: Option<Vec<f64>>,
    pub marginal: Vec<(usize, usize)>,
    pub chains: usize,
    pub quadrature_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            example: ExampleKind::Quickstart,
            samples: 10_000,
            burn: 0,
            divs: 1,
            visual: false,
            seed: 0,
            bins: 50,
            range: None,
            d_min: None,
            d_max: None,
            backoff: BackoffArg::None,
            max_steps: 1,
            factor: None,
            prior_mean: None,
            prior_precision: None,
            x0: None,
            out_dir: PathBuf::from("gnm-out"),
            checkpoint: None,
            resume: None,
            y: None,
            sigma: None,
            data_seed: None,
            times: None,
            marginal: Vec::new(),
            chains: 1,
            quadrature_points: 10_001,
        }
    }
}

fn bad(msg: impl Into<String>) -> GnmError {
    GnmError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn problem_params(&self) -> ProblemParams {
        ProblemParams {
            y: self.y,
            sigma: self.sigma,
            data_seed: self.data_seed,
            times: self.times.clone(),
        }
    }

    /// Checks everything that can be checked without running the model.
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(bad("--samples must be at least 1"));
        }
        if self.divs == 0 || self.divs > self.samples {
            return Err(bad("--divs must be between 1 and --samples"));
        }
        if self.burn > self.samples {
            return Err(bad("--burn cannot exceed --samples"));
        }
        if self.bins == 0 {
            return Err(bad("--bins must be positive"));
        }
        if self.chains == 0 {
            return Err(bad("--chains must be positive"));
        }
        if self.quadrature_points < 101 {
            return Err(bad("quadrature needs at least 101 points"));
        }
        if let Some((lo, hi)) = self.range {
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(lo < hi) {
                return Err(bad("--range needs lo < hi"));
            }
        }
        if self.d_min.is_some() != self.d_max.is_some() {
            return Err(bad("d_min and d_max must be given together"));
        }
        self.policy().map(|_| ())
    }

    pub fn policy(&self) -> Result<BackoffPolicy> {
        Ok(match self.backoff {
            BackoffArg::None => BackoffPolicy::none(),
            BackoffArg::Static => BackoffPolicy::fixed(self.max_steps, self.factor.unwrap_or(0.5))?,
            BackoffArg::Dynamic => match self.factor {
                Some(f) => BackoffPolicy::dynamic_with(self.max_steps, f, BackoffPolicy::DEFAULT_T_LO, BackoffPolicy::DEFAULT_T_HI)?,
                None => BackoffPolicy::dynamic(self.max_steps)?,
            },
        })
    }

    /// The example's prior with any mean or precision overrides applied.
    pub fn prior(&self, problem: &Problem) -> Result<GaussianPrior> {
        let n = problem.dim;
        let mean = match &self.prior_mean {
            Some(m) if m.len() != n => return Err(bad(format!("--prior-mean needs {n} values, got {}", m.len()))),
            Some(m) => DVector::from_column_slice(m),
            None => problem.prior.mean().clone(),
        };
        let precision = match &self.prior_precision {
            None => problem.prior.precision().clone(),
            Some(PrecisionSpec::Named(s)) if s.eq_ignore_ascii_case("flat") => DMatrix::zeros(n, n),
            Some(PrecisionSpec::Named(s)) => return Err(bad(format!("unknown prior precision `{s}`"))),
            Some(PrecisionSpec::Entries(e)) if e.len() != n * n => {
                return Err(bad(format!("--prior-precision needs {} values, got {}", n * n, e.len())))
            }
            Some(PrecisionSpec::Entries(e)) => DMatrix::from_row_slice(n, n, e),
        };
        Ok(GaussianPrior::new(mean, precision)?)
    }

    pub fn x0(&self, problem: &Problem) -> Result<DVector<f64>> {
        match &self.x0 {
            Some(x) if x.len() != problem.dim => Err(bad(format!("--x0 needs {} values", problem.dim))),
            Some(x) => Ok(DVector::from_column_slice(x)),
            None => Ok(problem.x0.clone()),
        }
    }

    /// Per-coordinate histogram bounds, if configured.
    pub fn hist_bounds(&self, dim: usize) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if let (Some(lo), Some(hi)) = (&self.d_min, &self.d_max) {
            if lo.len() != dim || hi.len() != dim {
                return Err(bad(format!("d_min and d_max need {dim} values")));
            }
            return Ok(Some((lo.clone(), hi.clone())));
        }
        Ok(self.range.map(|(lo, hi)| (vec![lo; dim], vec![hi; dim])))
    }
}
