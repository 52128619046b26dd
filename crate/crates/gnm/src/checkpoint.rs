//! Self-describing JSON checkpoints with a CRC-32 over the canonical body.
//!
//! Fields are written in a fixed order and floats with 17 significant
//! digits, so the canonical body can be rebuilt from a parsed snapshot and
//! its checksum compared with the stored one.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use gnm_core::kernel::{BackoffMode, BackoffPolicy};
use gnm_core::model::Model;
use gnm_core::sampler::{RngState, SamplerSnapshot};
use gnm_core::Sampler;
use serde_json::{Map, Value};

use crate::error::{io_err, GnmError, Result};

pub const FORMAT_VERSION: u64 = 1;

fn float(out: &mut String, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(GnmError::Config(format!("cannot checkpoint non-finite value {v}")));
    }
    write!(out, "{v:.16e}").unwrap();
    Ok(())
}

fn floats(out: &mut String, vs: &[f64]) -> Result<()> {
    out.push('[');
    for (i, &v) in vs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        float(out, v)?;
    }
    out.push(']');
    Ok(())
}

/// Compact JSON of every field except the checksum, in file order.
fn canonical_body(s: &SamplerSnapshot) -> Result<String> {
    let mut out = String::with_capacity(64 + 26 * s.chain.len());
    write!(out, "{{\"format_version\":{FORMAT_VERSION},\"dim\":{},\"chain\":[", s.dim).unwrap();
    if s.dim > 0 {
        for (i, row) in s.chain.chunks_exact(s.dim).enumerate() {
            if i > 0 {
                out.push(',');
            }
            floats(&mut out, row)?;
        }
    }
    write!(
        out,
        "],\"counters\":{{\"n_samples\":{},\"n_accepted\":{},\"call_count\":{},\"burned\":{}}},\"step_count\":{{",
        s.n_samples, s.n_accepted, s.call_count, s.burned
    )
    .unwrap();
    for (i, (stage, count)) in s.step_count.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "\"{stage}\":{count}").unwrap();
    }
    let p = &s.policy;
    write!(out, "}},\"policy\":{{\"mode\":\"{}\",\"max_steps\":{},\"factor\":", p.mode.as_str(), p.max_steps).unwrap();
    float(&mut out, p.factor)?;
    out.push_str(",\"t_lo\":");
    float(&mut out, p.t_lo)?;
    out.push_str(",\"t_hi\":");
    float(&mut out, p.t_hi)?;
    out.push_str("},\"prior\":{\"mean\":");
    floats(&mut out, &s.prior_mean)?;
    out.push_str(",\"precision\":");
    floats(&mut out, &s.prior_precision)?;
    out.push_str("},\"current_x\":");
    floats(&mut out, &s.current_x)?;
    write!(out, ",\"rng\":{{\"algorithm_id\":{},\"state\":[", Value::String(s.rng.algorithm_id.clone())).unwrap();
    for (i, w) in s.rng.state.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "\"{w}\"").unwrap();
    }
    out.push_str("]}}");
    Ok(out)
}

fn checksum(body: &str) -> String {
    format!("{:08x}", crc32fast::hash(body.as_bytes()))
}

/// Serializes a snapshot to the checkpoint text.
pub fn to_string(s: &SamplerSnapshot) -> Result<String> {
    let body = canonical_body(s)?;
    let sum = checksum(&body);
    let mut out = body;
    out.pop();
    writeln!(out, ",\"checksum\":\"{sum}\"}}").unwrap();
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> GnmError {
    GnmError::CorruptCheckpoint(msg.into())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| corrupt(format!("missing field `{key}`")))
}

fn object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| corrupt(format!("`{what}` is not an object")))
}

fn uint(v: &Value, what: &str) -> Result<u64> {
    v.as_u64().ok_or_else(|| corrupt(format!("`{what}` is not an unsigned integer")))
}

fn real(v: &Value, what: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| corrupt(format!("`{what}` is not a number")))
}

fn reals(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| corrupt(format!("`{what}` is not an array")))?
        .iter()
        .map(|x| real(x, what))
        .collect()
}

/// Parses checkpoint text, checking the version and checksum.
pub fn from_str(text: &str) -> Result<SamplerSnapshot> {
    let root: Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let root = object(&root, "checkpoint")?;
    let version = uint(field(root, "format_version")?, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format_version {version}")));
    }
    let stored_sum = field(root, "checksum")?
        .as_str()
        .ok_or_else(|| corrupt("`checksum` is not a string"))?
        .to_owned();

    let dim = uint(field(root, "dim")?, "dim")? as usize;
    let mut chain = Vec::new();
    for row in field(root, "chain")?.as_array().ok_or_else(|| corrupt("`chain` is not an array"))? {
        let row = reals(row, "chain")?;
        if row.len() != dim {
            return Err(corrupt("chain row length differs from dim"));
        }
        chain.extend(row);
    }
    let counters = object(field(root, "counters")?, "counters")?;
    let count = |k: &str| -> Result<u64> { uint(field(counters, k)?, k) };

    let mut step_count = Vec::new();
    for (k, v) in object(field(root, "step_count")?, "step_count")? {
        let stage: i32 = k.parse().map_err(|_| corrupt(format!("bad stage key `{k}`")))?;
        step_count.push((stage, uint(v, "step_count")?));
    }
    step_count.sort_by_key(|&(s, _)| if s < 0 { i64::MIN } else { s as i64 });

    let pol = object(field(root, "policy")?, "policy")?;
    let mode = match field(pol, "mode")?.as_str() {
        Some("none") => BackoffMode::None,
        Some("static") => BackoffMode::Static,
        Some("dynamic") => BackoffMode::Dynamic,
        _ => return Err(corrupt("unknown back-off mode")),
    };
    let policy = BackoffPolicy {
        mode,
        max_steps: uint(field(pol, "max_steps")?, "max_steps")? as usize,
        factor: real(field(pol, "factor")?, "factor")?,
        t_lo: real(field(pol, "t_lo")?, "t_lo")?,
        t_hi: real(field(pol, "t_hi")?, "t_hi")?,
    };

    let prior = object(field(root, "prior")?, "prior")?;
    let rng = object(field(root, "rng")?, "rng")?;
    let state = field(rng, "state")?
        .as_array()
        .ok_or_else(|| corrupt("`rng.state` is not an array"))?
        .iter()
        .map(|w| {
            w.as_str()
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| corrupt("`rng.state` entries must be decimal strings"))
        })
        .collect::<Result<Vec<u64>>>()?;

    let snapshot = SamplerSnapshot {
        dim,
        chain,
        n_samples: count("n_samples")?,
        n_accepted: count("n_accepted")?,
        call_count: count("call_count")?,
        burned: count("burned")?,
        step_count,
        policy,
        prior_mean: reals(field(prior, "mean")?, "prior.mean")?,
        prior_precision: reals(field(prior, "precision")?, "prior.precision")?,
        current_x: reals(field(root, "current_x")?, "current_x")?,
        rng: RngState {
            algorithm_id: field(rng, "algorithm_id")?
                .as_str()
                .ok_or_else(|| corrupt("`rng.algorithm_id` is not a string"))?
                .to_owned(),
            state,
        },
    };
    if checksum(&canonical_body(&snapshot)?) != stored_sum {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(snapshot)
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save(path: &Path, s: &SamplerSnapshot) -> Result<()> {
    let text = to_string(s)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<SamplerSnapshot> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_str(&text)
}

pub fn save_checkpoint<M: Model>(sampler: &Sampler<M>, path: &Path) -> Result<()> {
    save(path, &sampler.snapshot())
}

/// Restores a sampler over `model`, which takes inputs of length `dim`.
pub fn load_checkpoint<M: Model>(path: &Path, model: M, dim: usize) -> Result<Sampler<M>> {
    let snapshot = load(path)?;
    if snapshot.dim != dim {
        return Err(gnm_core::Error::DimensionMismatch {
            what: "checkpoint dimension",
            expected: dim,
            found: snapshot.dim,
        }
        .into());
    }
    Ok(Sampler::restore(&snapshot, model)?)
}
