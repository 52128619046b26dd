//! Command-line interface: `gnm sample` and `gnm jtest`.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnm_core::jtest::{jtest, JtestDomain, JtestOptions};
use gnm_core::model::ModelHandle;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{BackoffArg, PrecisionSpec, RunConfig};
use crate::error::{GnmError, Result};
use crate::problems::{ExampleKind, Problem, ProblemParams};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ANALYSIS_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "gnm", version, about = "Gauss-Newton-Metropolis sampler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a bundled example and write chain, histograms and a summary.
    Sample(Box<SampleArgs>),
    /// Check a bundled model's Jacobian against symmetric differences.
    Jtest(JtestArgs),
}

#[derive(Debug, Default, Args)]
pub struct SampleArgs {
    /// JSON file with `RunConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub example: Option<ExampleKind>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: Option<u64>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub divs: Option<u64>,
    /// Print the percentage done after each division.
    #[arg(long)]
    pub visual: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: Option<u64>,
    /// Histogram range for every coordinate.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub backoff: Option<BackoffArg>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Static dilation factor, or the dynamic fallback.
    #[arg(long)]
    pub factor: Option<f64>,
    /// Comma-separated prior mean.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub prior_mean: Option<Vec<f64>>,
    /// Row-major comma-separated precision, or `flat`.
    #[arg(long, allow_hyphen_values = true)]
    pub prior_precision: Option<PrecisionSpec>,
    /// Comma-separated starting point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Safe mode: checkpoint to this file after every division.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue the run stored in this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub y: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seed for the synthetic exp-series data.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Comma-separated measurement times for the exp-series example.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// Write a 2D marginal grid for coordinates I and J (1-based).
    #[arg(long, num_args = 2, value_names = ["I", "J"], action = clap::ArgAction::Append)]
    pub marginal: Vec<usize>,
    /// Independent chains run in parallel, seeded consecutively.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub chains: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(101..))]
    pub quadrature_points: Option<u64>,
}

impl SampleArgs {
    /// Defaults, then the `--config` file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = v.clone().into(); } )* };
        }
        set!(example, burn, seed, backoff, max_steps, out_dir);
        macro_rules! set_opt {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = Some(v.clone()); } )* };
        }
        set_opt!(factor, prior_mean, prior_precision, x0, checkpoint, resume, y, sigma, data_seed, times);
        if let Some(v) = self.samples {
            c.samples = v as usize;
        }
        if let Some(v) = self.divs {
            c.divs = v as usize;
        }
        if let Some(v) = self.bins {
            c.bins = v as usize;
        }
        if let Some(v) = self.chains {
            c.chains = v as usize;
        }
        if let Some(v) = self.quadrature_points {
            c.quadrature_points = v as usize;
        }
        if let Some(r) = &self.range {
            c.range = Some((r[0], r[1]));
        }
        if !self.marginal.is_empty() {
            c.marginal = self.marginal.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        }
        c.visual |= self.visual;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct JtestArgs {
    #[arg(long, value_enum, default_value = "quickstart")]
    pub example: ExampleKind,
    /// Comma-separated lower box corner; defaults to the example's box.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x_min: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x_max: Option<Vec<f64>>,
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub eps_max: Option<f64>,
    /// Norm order; `inf` for the max norm.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, allow_negative_numbers = true)]
    pub y: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn exit_for(err: &GnmError) -> u8 {
    match err {
        GnmError::Config(_) => EXIT_USAGE,
        GnmError::Core(e) if is_usage(e) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn is_usage(e: &gnm_core::Error) -> bool {
    use gnm_core::Error::*;
    matches!(
        e,
        NotPsd(_) | InvalidDilation(_) | InvalidPolicy(_) | BurnTooLarge { .. } | InvalidArgument(_) | DimensionMismatch { .. }
    )
}

pub fn run_jtest<W: Write>(args: &JtestArgs, out: &mut W) -> ExitCode {
    let params = ProblemParams {
        y: args.y,
        sigma: args.sigma,
        ..Default::default()
    };
    let problem = match Problem::build(args.example, &params) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    let lo = args.x_min.clone().map_or(problem.jtest_min.clone(), DVector::from_vec);
    let hi = args.x_max.clone().map_or(problem.jtest_max.clone(), DVector::from_vec);
    let domain = match JtestDomain::new(lo, hi) {
        Ok(d) => d,
        Err(e) => return usage(e),
    };
    let d = JtestOptions::default();
    let opts = JtestOptions {
        dx: args.dx.unwrap_or(d.dx),
        n_points: args.n_points.unwrap_or(d.n_points),
        eps_max: args.eps_max.unwrap_or(d.eps_max),
        p: args.p.unwrap_or(d.p),
        l_max: args.l_max.unwrap_or(d.l_max),
        r: args.r.unwrap_or(d.r),
    };
    let mut handle = ModelHandle::new(problem.model, problem.dim);
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    match jtest(&mut handle, &domain, &opts, &mut rng) {
        Ok(0.0) => {
            let _ = writeln!(out, "jtest passed: 0 ({} calls)", handle.call_count());
            ExitCode::from(EXIT_OK)
        }
        Ok(eps) => {
            let _ = writeln!(out, "jtest failed: {eps:e}");
            ExitCode::from(EXIT_ANALYSIS_FAILURE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e.into()))
        }
    }
}

pub fn run_sample_command<W: Write + Send>(args: &SampleArgs, out: &mut W) -> ExitCode {
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    match crate::run::sample(&config, out) {
        Ok(summaries) => {
            for s in &summaries {
                let _ = writeln!(
                    out,
                    "seed {}: accept_rate {:.4}, {} samples kept, {} calls",
                    s.seed, s.accept_rate, s.n_samples, s.call_count
                );
            }
            ExitCode::from(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let mut stdout = std::io::stdout();
    match &cli.command {
        Command::Sample(a) => run_sample_command(a, &mut stdout),
        Command::Jtest(a) => run_jtest(a, &mut stdout),
    }
}
