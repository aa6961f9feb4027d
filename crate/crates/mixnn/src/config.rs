//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys, repeated keys and keys without a value are errors. Settings
//! are layered: defaults, then the file, then command-line overrides.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use mixnn_core::trainer::{Mode, StartEpoch, TrainConfig};

use crate::error::{CliError, Result};

/// Every accepted key, in the order [`render`] writes them.
pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "epochs",
    "warmup_epochs",
    "batch_size",
    "k",
    "alpha",
    "start_epoch",
    "lr_max",
    "lr_min",
    "lr_period",
    "momentum",
    "weight_decay",
    "hidden",
    "hnsw_m",
    "hnsw_ef_construction",
    "hnsw_ef_search",
    "em_tol",
    "em_max_iter",
    "em_var_floor",
    "neighbors_use_soft_targets",
    "exclude_self",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// An integer is an absolute epoch; a value with a decimal point or exponent
/// is a fraction of the total epoch count.
fn parse_start_epoch(value: &str) -> Result<StartEpoch> {
    if value.contains(['.', 'e', 'E']) {
        Ok(StartEpoch::Fraction(parse("start_epoch", value)?))
    } else {
        Ok(StartEpoch::Absolute(parse("start_epoch", value)?))
    }
}

fn parse_hidden(value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|w| parse("hidden", w.trim())).collect()
}

/// Applies one setting to `config`.
pub fn set(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    if value.is_empty() {
        return Err(CliError::Config(format!("`{key}` has no value")));
    }
    match key {
        "mode" => config.mode = Mode::from_str(value).map_err(|e| CliError::Config(format!("`mode`: {e}")))?,
        "seed" => config.seed = parse(key, value)?,
        "epochs" => config.epochs = parse(key, value)?,
        "warmup_epochs" => config.warmup_epochs = parse(key, value)?,
        "batch_size" => config.batch_size = parse(key, value)?,
        "k" => config.k = parse(key, value)?,
        "alpha" => config.alpha = parse(key, value)?,
        "start_epoch" => config.start_epoch = parse_start_epoch(value)?,
        "lr_max" => config.lr.lr_max = parse(key, value)?,
        "lr_min" => config.lr.lr_min = parse(key, value)?,
        "lr_period" => config.lr.period = parse(key, value)?,
        "momentum" => config.momentum = parse(key, value)?,
        "weight_decay" => config.weight_decay = parse(key, value)?,
        "hidden" => config.hidden = parse_hidden(value)?,
        "hnsw_m" => config.hnsw.m = parse(key, value)?,
        "hnsw_ef_construction" => config.hnsw.ef_construction = parse(key, value)?,
        "hnsw_ef_search" => config.hnsw.ef_search = parse(key, value)?,
        "em_tol" => config.em.tol = parse(key, value)?,
        "em_max_iter" => config.em.max_iter = parse(key, value)?,
        "em_var_floor" => config.em.var_floor = parse(key, value)?,
        "neighbors_use_soft_targets" => config.neighbors_use_soft_targets = parse(key, value)?,
        "exclude_self" => config.exclude_self = parse(key, value)?,
        _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

/// The value of `key` as [`set`] would accept it back.
pub fn get(config: &TrainConfig, key: &str) -> Option<String> {
    let v = match key {
        "mode" => config.mode.to_string(),
        "seed" => config.seed.to_string(),
        "epochs" => config.epochs.to_string(),
        "warmup_epochs" => config.warmup_epochs.to_string(),
        "batch_size" => config.batch_size.to_string(),
        "k" => config.k.to_string(),
        "alpha" => format!("{:?}", config.alpha),
        "start_epoch" => match config.start_epoch {
            StartEpoch::Absolute(e) => e.to_string(),
            StartEpoch::Fraction(f) => format!("{f:?}"),
        },
        "lr_max" => format!("{:?}", config.lr.lr_max),
        "lr_min" => format!("{:?}", config.lr.lr_min),
        "lr_period" => config.lr.period.to_string(),
        "momentum" => format!("{:?}", config.momentum),
        "weight_decay" => format!("{:?}", config.weight_decay),
        "hidden" => config.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        "hnsw_m" => config.hnsw.m.to_string(),
        "hnsw_ef_construction" => config.hnsw.ef_construction.to_string(),
        "hnsw_ef_search" => config.hnsw.ef_search.to_string(),
        "em_tol" => format!("{:?}", config.em.tol),
        "em_max_iter" => config.em.max_iter.to_string(),
        "em_var_floor" => format!("{:?}", config.em.var_floor),
        "neighbors_use_soft_targets" => config.neighbors_use_soft_targets.to_string(),
        "exclude_self" => config.exclude_self.to_string(),
        _ => return None,
    };
    Some(v)
}

/// `(key, value)` for every key.
pub fn pairs(config: &TrainConfig) -> Vec<(String, String)> {
    KEYS.iter().map(|&k| (k.to_string(), get(config, k).expect("listed key"))).collect()
}

/// Config file text holding every setting of `config`.
pub fn render(config: &TrainConfig) -> String {
    let mut out = String::new();
    for (k, v) in pairs(config) {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// Parses config text into `(key, value)` pairs without applying them.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = Vec::<String>::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!("line {}: expected `key = value`, found `{line}`", n + 1)));
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("line {}: unknown key `{key}`", n + 1)));
        }
        if seen.iter().any(|s| s == key) {
            return Err(CliError::Config(format!("line {}: `{key}` is set twice", n + 1)));
        }
        if value.trim().is_empty() {
            return Err(CliError::Config(format!("line {}: `{key}` has no value", n + 1)));
        }
        seen.push(key.to_string());
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Defaults, then `file`, then `overrides`; the result is validated.
pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (k, v) in parse_text(&text)? {
            set(&mut config, &k, &v)?;
        }
    }
    for (k, v) in overrides {
        set(&mut config, k, v)?;
    }
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}
