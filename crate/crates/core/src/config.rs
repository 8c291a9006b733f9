//! Layered run configuration: TOML file, then `REGRETFORGE_*` environment
//! variables, then command-line overrides.

use std::path::Path;

use serde::Serialize;
use toml::{Table, Value};

use crate::trainer::{TrainConfig, SCALED_SUBSET};

pub const ENV_PREFIX: &str = "REGRETFORGE_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("{origin}: {msg}")]
    Field { origin: String, msg: String },
}

/// Keys whose values are lists; string values are split on commas.
const LIST_KEYS: [&str; 2] = ["primitive_subset", "eval_tasks"];

/// Environment variables that are not config keys.
const RESERVED_ENV: [&str; 1] = ["LOG"];

/// Parses a scalar written on a command line or in the environment.
pub fn parse_value(key: &str, raw: &str) -> Value {
    if LIST_KEYS.contains(&key) {
        if key == "primitive_subset" && raw == "scaled" {
            return Value::Array(SCALED_SUBSET.iter().map(|s| Value::String(s.to_string())).collect());
        }
        return Value::Array(raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| Value::String(s.into())).collect());
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return Value::Float(f);
    }
    match raw {
        "true" => Value::Boolean(true),
        "false" => Value::Boolean(false),
        _ => Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut Table, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut t = table;
    for p in parents {
        t = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new())).as_table_mut().expect("nested key is a table");
    }
    t.insert(last.to_string(), value);
}

/// Maps `REGRETFORGE_NAVIGATOR_EMBED` to `["navigator", "embed"]` and
/// `REGRETFORGE_EVAL_EVERY` to `["eval_every"]`.
fn env_key(suffix: &str) -> Vec<String> {
    let lower = suffix.to_ascii_lowercase();
    match lower.strip_prefix("navigator_") {
        Some(rest) => vec!["navigator".into(), rest.into()],
        None => vec![lower],
    }
}

/// Resolves the layered config. `overrides` are `(dotted key, raw value)`
/// pairs from flags and win over everything else.
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, String)],
) -> Result<TrainConfig, ConfigError> {
    let mut table = match file {
        None => Table::new(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.display().to_string(), source })?;
            text.parse::<Table>().map_err(|e| ConfigError::Parse { path: p.display().to_string(), msg: e.to_string() })?
        }
    };
    let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    env.sort();
    for (k, v) in env {
        let suffix = &k[ENV_PREFIX.len()..];
        if RESERVED_ENV.contains(&suffix) {
            continue;
        }
        let path = env_key(suffix);
        let leaf = path.last().expect("non-empty").clone();
        let refs: Vec<&str> = path.iter().map(String::as_str).collect();
        set_path(&mut table, &refs, parse_value(&leaf, &v));
    }
    for (k, v) in overrides {
        let refs: Vec<&str> = k.split('.').collect();
        set_path(&mut table, &refs, parse_value(refs.last().expect("non-empty"), v));
    }
    let cfg: TrainConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Field {
        origin: file.map_or("config".into(), |p| p.display().to_string()),
        msg: e.message().to_string(),
    })?;
    cfg.validate().map_err(|e| ConfigError::Field { origin: "config".into(), msg: e.to_string() })?;
    Ok(cfg)
}

/// Written to the run directory before training starts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub version: String,
    pub seed: u64,
    pub out_dir: String,
    pub metrics: String,
    pub eval: String,
    pub checkpoints: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
}

/// Written when training finishes; the manifest itself is never rewritten.
#[derive(Debug, Clone, Serialize)]
pub struct RunCompletion {
    pub iterations: usize,
    pub finished_at: u64,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
