//! Std companion to `gnm-core`: checkpoints, data files, bundled example
//! problems and the `gnm` command-line driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod problems;
pub mod run;

pub use config::RunConfig;
pub use error::{GnmError, Result};
pub use problems::{ExampleKind, Problem, ProblemParams};
pub use run::{run_sample, sample};
