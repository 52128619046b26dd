//! Sampling with progress and safe mode, and the full `sample` pipeline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use gnm_core::diagnostics::{acor, error_bars, error_bars_2d, quadrature_1d, step_percentages};
use gnm_core::model::Model;
use gnm_core::posterior::log_posterior;
use gnm_core::Sampler;
use nalgebra::DVector;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{GnmError, Result};
use crate::output::{self, CoordinateSummary, Summary};
use crate::problems::{BoxedModel, Problem};

/// Appends `n` samples in `divs` divisions. With `visual` the percentage
/// done is printed after each division; with `safe` a checkpoint is written
/// after each division, the last of which marks completion.
pub fn run_sample<M: Model, W: Write>(
    sampler: &mut Sampler<M>,
    n: usize,
    divs: usize,
    visual: bool,
    safe: Option<&Path>,
    progress: &mut W,
) -> Result<()> {
    run_sample_until(sampler, n, divs, visual, safe, progress, None)
}

/// As [`run_sample`], but stops with [`GnmError::Interrupted`] once division
/// `stop_after` is finished (and checkpointed).
pub fn run_sample_until<M: Model, W: Write>(
    sampler: &mut Sampler<M>,
    n: usize,
    divs: usize,
    visual: bool,
    safe: Option<&Path>,
    progress: &mut W,
    stop_after: Option<usize>,
) -> Result<()> {
    sampler.run_divided(n, divs, |s, done, total| {
        if let Some(path) = safe {
            checkpoint::save_checkpoint(s, path)?;
        }
        if visual {
            let _ = writeln!(progress, "{:.0}%", 100.0 * done as f64 / total as f64);
        }
        match stop_after {
            Some(k) if done == k && done < total => Err(GnmError::Interrupted(done)),
            _ => Ok(()),
        }
    })
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    if suffix.is_empty() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo < hi {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// A fresh sampler for `config`'s example, prior, start and policy.
pub fn build_sampler(config: &RunConfig, seed: u64) -> Result<Sampler<BoxedModel>> {
    let problem = Problem::build(config.example, &config.problem_params())?;
    let prior = config.prior(&problem)?;
    let x0 = config.x0(&problem)?;
    let mut s = Sampler::with_prior(x0, problem.model, prior)?.with_seed(seed);
    s.set_policy(config.policy()?)?;
    Ok(s)
}

/// Runs one chain of `config` and writes its files, suffixed by `suffix`.
pub fn sample_one<W: Write>(config: &RunConfig, seed: u64, suffix: &str, progress: &mut W) -> Result<Summary> {
    let safe = config.checkpoint.as_deref().map(|p| suffixed(p, suffix));
    let mut sampler = match &config.resume {
        Some(path) => {
            let problem = Problem::build(config.example, &config.problem_params())?;
            checkpoint::load_checkpoint(&suffixed(path, suffix), problem.model, problem.dim)?
        }
        None => build_sampler(config, seed)?,
    };
    let dim = sampler.dim();
    let done = sampler.n_steps() as usize;
    if done > config.samples {
        return Err(GnmError::Config(format!("checkpoint already holds {done} steps, more than --samples")));
    }
    let remaining = config.samples - done;
    if remaining > 0 {
        let divs = (config.divs * remaining).div_ceil(config.samples).clamp(1, remaining);
        run_sample(&mut sampler, remaining, divs, config.visual, safe.as_deref(), progress)?;
    }
    let to_burn = config.burn.saturating_sub(sampler.burned() as usize);
    sampler.burn(to_burn)?;

    let out = &config.out_dir;
    let chain = sampler.chain();
    output::write_chain(&out.join(format!("chain{suffix}.csv")), chain, dim)?;

    let mut warnings = Vec::new();
    if sampler.singular_warnings() > 0 {
        warnings.push(format!("{} transitions hit a singular proposal and were rejected", sampler.singular_warnings()));
    }
    let n_rows = sampler.n_samples() as usize;
    let mut coordinates = Vec::with_capacity(dim);
    for j in 0..dim {
        let series = sampler.coordinate(j);
        let mean = if n_rows > 0 { series.iter().sum::<f64>() / n_rows as f64 } else { f64::NAN };
        match acor(&series, 5) {
            Ok(r) => coordinates.push(CoordinateSummary {
                mean,
                tau: Some(r.tau),
                ess: Some(r.effective_size(n_rows)),
                sigma: Some(r.sigma),
            }),
            Err(e) => {
                warnings.push(format!("x{}: autocorrelation time unavailable: {e}", j + 1));
                coordinates.push(CoordinateSummary {
                    mean,
                    tau: None,
                    ess: None,
                    sigma: None,
                });
            }
        }
    }

    if n_rows > 0 {
        let (d_min, d_max) = match config.hist_bounds(dim)? {
            Some(b) => b,
            None => (0..dim).map(|j| span(sampler.coordinate(j).into_iter())).unzip(),
        };
        let hist = error_bars(chain, dim, config.bins, &d_min, &d_max)?;
        output::write_histograms(out, suffix, &hist)?;
        for &(i, j) in &config.marginal {
            if i == 0 || j == 0 || i > dim || j > dim {
                return Err(GnmError::Config(format!("--marginal coordinates must lie in 1..={dim}")));
            }
            let h = error_bars_2d(chain, dim, (i - 1, j - 1), config.bins, (d_min[i - 1], d_max[i - 1]), (d_min[j - 1], d_max[j - 1]))?;
            output::write_marginal(&out.join(format!("marginal_x{i}_x{j}{suffix}.csv")), &h)?;
        }
        if dim == 1 {
            let model = sampler.model().model();
            let prior = sampler.prior();
            let log_density = |x: f64| {
                let v = DVector::from_element(1, x);
                model.evaluate(&v).map_or(f64::NAN, |e| log_posterior(prior, &e, &v))
            };
            let (grid, dens) = quadrature_1d(log_density, d_min[0], d_max[0], config.quadrature_points)?;
            output::write_quadrature(&out.join(format!("quadrature{suffix}.csv")), &grid, &dens)?;
        }
    }

    let counts = sampler.step_counts();
    let summary = Summary {
        example: format!("{:?}", config.example).to_lowercase(),
        seed,
        policy: sampler.policy().mode.as_str().to_owned(),
        max_steps: sampler.policy().max_steps,
        factor: sampler.policy().factor,
        n_samples: sampler.n_samples(),
        burned: sampler.burned(),
        n_accepted: sampler.n_accepted(),
        accept_rate: sampler.accept_rate(),
        call_count: sampler.call_count(),
        step_count: counts.iter().map(|(s, c)| (s.to_string(), *c)).collect::<BTreeMap<_, _>>(),
        step_fraction: step_percentages(&counts).into_iter().map(|(s, f)| (s.to_string(), f)).collect(),
        coordinates,
        warnings,
    };
    output::write_summary(&out.join(format!("summary{suffix}.json")), &summary)?;
    Ok(summary)
}

/// Runs `config.chains` independent chains, seeded `seed, seed + 1, ...`.
/// A single chain writes unsuffixed files; otherwise chain `i` uses `_c{i}`.
pub fn sample<W: Write + Send>(config: &RunConfig, progress: &mut W) -> Result<Vec<Summary>> {
    config.validate()?;
    if config.chains == 1 {
        return Ok(vec![sample_one(config, config.seed, "", progress)?]);
    }
    let results: Vec<(Result<Summary>, Vec<u8>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|i| {
                scope.spawn(move || {
                    let mut log = Vec::new();
                    let r = sample_one(config, config.seed.wrapping_add(i as u64), &format!("_c{i}"), &mut log);
                    (r, log)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let mut summaries = Vec::with_capacity(results.len());
    for (i, (r, log)) in results.into_iter().enumerate() {
        for line in String::from_utf8_lossy(&log).lines() {
            let _ = writeln!(progress, "[chain {i}] {line}");
        }
        summaries.push(r?);
    }
    Ok(summaries)
}
