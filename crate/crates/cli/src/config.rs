//! Run configuration. One flat key-path file drives every subcommand;
//! JSON is accepted as an alternative, environment variables and flags
//! override file values, in that order.
//!
//! Flat format: one `key = value` per line, `#` starts a comment line.
//! JSON format: nested objects flatten to dotted paths, scalar arrays to
//! comma-joined values. Environment: `PANELVAR_` prefix, lowercase, `__`
//! for the dot (`PANELVAR_MCMC__N_SAVE` -> `mcmc.n_save`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use panelvar::panel::Month;

use crate::{validation, CliResult};

pub const ENV_PREFIX: &str = "PANELVAR_";

/// Every key any subcommand reads. Unknown keys are rejected up front so a
/// typo fails the run instead of silently falling back to a default.
const KNOWN_KEYS: &[&str] = &[
    "data.panel",
    "data.variables",
    "fetch.base_url",
    "fetch.series",
    "fetch.cache_dir",
    "fetch.retries",
    "fetch.retry_base_ms",
    "sim.n_units",
    "sim.m_per_unit",
    "sim.p",
    "sim.t_len",
    "sim.sparsity",
    "sim.own_diag",
    "sim.cross_scale",
    "model.p",
    "model.name",
    "model.propagate_stacked",
    "vamp.tol",
    "vamp.max_iter",
    "vamp.damping",
    "vamp.zeta_init",
    "vamp.a_sigma",
    "vamp.b_sigma",
    "mcmc.n_burn",
    "mcmc.n_save",
    "mcmc.thin",
    "forecast.h",
    "forecast.benchmark",
    "forecast.point",
    "forecast.bench_draws",
    "holdout.first_origin",
    "spillover.h",
    "spillover.window_ends",
    "spillover.first_end",
    "spillover.step",
    "seed",
    "threads",
    "out",
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    /// Reads a config file, flat or JSON by extension.
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
        let map = if path.extension().and_then(|s| s.to_str()) == Some("json") {
            flatten_json(&text)?
        } else {
            parse_flat(&text)?
        };
        let unknown: Vec<&str> = map
            .keys()
            .filter(|k| !KNOWN_KEYS.contains(&k.as_str()))
            .map(|k| k.as_str())
            .collect();
        if !unknown.is_empty() {
            return Err(validation(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        Ok(Config { map })
    }

    /// Applies `PANELVAR_*` overrides from an explicit variable list, so
    /// tests can exercise the mapping without touching the process env.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(
        &mut self,
        vars: I,
    ) -> CliResult<()> {
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = rest.to_lowercase().replace("__", ".");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(validation(format!(
                    "environment variable {name} maps to unknown config key {key}"
                )));
            }
            self.map.insert(key, value);
        }
        Ok(())
    }

    /// Flag-level override, the last word.
    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(KNOWN_KEYS.contains(&key));
        self.map.insert(key.to_string(), value);
    }

    /// The effective key/value view, as echoed into manifests.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| validation(format!("missing config key {key}")))
    }

    /// Parses an optional key, naming the key and value on failure.
    pub fn parse<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| validation(format!("config key {key}: cannot parse value {raw:?}"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> CliResult<T> {
        self.require(key)?;
        Ok(self.parse(key)?.unwrap())
    }

    /// A path-valued key that must point at an existing file.
    pub fn existing_path(&self, key: &str) -> CliResult<PathBuf> {
        let p = PathBuf::from(self.require(key)?);
        if !p.is_file() {
            return Err(validation(format!(
                "config key {key}: no such file {}",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn month(&self, key: &str) -> CliResult<Option<Month>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                validation(format!(
                    "config key {key}: expected a YYYY-MM period, got {raw:?}"
                ))
            }),
        }
    }

    /// Comma-separated list value, entries trimmed.
    pub fn list(&self, key: &str) -> Option<Vec<String>> {
        self.get(key).map(|raw| {
            raw.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.parse_or("seed", 0)
    }

    pub fn out_dir(&self) -> CliResult<PathBuf> {
        Ok(PathBuf::from(self.require("out")?))
    }
}

fn parse_flat(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(validation(format!(
                "config line {}: expected key = value, got {line:?}",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(validation(format!("config line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(validation(format!(
                "config line {}: duplicate key {key}",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

fn flatten_json(text: &str) -> CliResult<BTreeMap<String, String>> {
    let root: serde_json::Value =
        serde_json::from_str(text).map_err(|e| validation(format!("config JSON: {e}")))?;
    let serde_json::Value::Object(obj) = root else {
        return Err(validation("config JSON must be an object"));
    };
    let mut map = BTreeMap::new();
    let mut stack: Vec<(String, serde_json::Value)> = obj.into_iter().collect();
    while let Some((key, value)) = stack.pop() {
        match value {
            serde_json::Value::Object(obj) => {
                for (k, v) in obj {
                    stack.push((format!("{key}.{k}"), v));
                }
            }
            serde_json::Value::Array(items) => {
                let mut parts = Vec::with_capacity(items.len());
                for item in items {
                    match scalar_to_string(&item) {
                        Some(s) => parts.push(s),
                        None => {
                            return Err(validation(format!(
                                "config key {key}: arrays may hold only scalars"
                            )))
                        }
                    }
                }
                map.insert(key, parts.join(","));
            }
            other => {
                let Some(s) = scalar_to_string(&other) else {
                    return Err(validation(format!("config key {key}: null is not a value")));
                };
                map.insert(key, s);
            }
        }
    }
    Ok(map)
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Builds the effective config for a run: file, then process environment,
/// then flags.
pub fn effective(
    config_path: Option<&Path>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<&Path>,
) -> CliResult<Config> {
    let path = config_path.ok_or_else(|| validation("--config is required"))?;
    let mut cfg = Config::load(path)?;
    cfg.apply_env(std::env::vars())?;
    if let Some(s) = seed {
        cfg.set("seed", s.to_string());
    }
    if let Some(t) = threads {
        cfg.set("threads", t.to_string());
    }
    if let Some(o) = out {
        cfg.set("out", o.display().to_string());
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_parse_trims_comments_and_blanks() {
        let map = parse_flat("# run\nseed = 7\n\nmodel.p= 2\nout =runs/a\n").unwrap();
        assert_eq!(map["seed"], "7");
        assert_eq!(map["model.p"], "2");
        assert_eq!(map["out"], "runs/a");
    }

    #[test]
    fn flat_parse_rejects_duplicates_and_garbage() {
        assert!(parse_flat("seed = 1\nseed = 2\n").is_err());
        assert!(parse_flat("just words\n").is_err());
    }

    #[test]
    fn json_flattens_to_the_same_keys() {
        let map = flatten_json(
            r#"{"seed": 7, "model": {"p": 2}, "spillover": {"window_ends": ["2001-01", "2002-01"]}}"#,
        )
        .unwrap();
        assert_eq!(map["seed"], "7");
        assert_eq!(map["model.p"], "2");
        assert_eq!(map["spillover.window_ends"], "2001-01,2002-01");
    }

    #[test]
    fn env_overrides_map_double_underscore_to_dot() {
        let mut cfg = Config {
            map: BTreeMap::from([("mcmc.n_save".into(), "100".into())]),
        };
        cfg.apply_env([("PANELVAR_MCMC__N_SAVE".to_string(), "250".to_string())])
            .unwrap();
        assert_eq!(cfg.get("mcmc.n_save"), Some("250"));
        let err = cfg
            .apply_env([("PANELVAR_NO_SUCH".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("no_such"));
    }

    #[test]
    fn missing_required_key_is_named() {
        let cfg = Config::default();
        let err = cfg.require("data.panel").unwrap_err();
        assert!(err.to_string().contains("data.panel"));
        assert_eq!(err.exit_code(), 1);
    }
}
