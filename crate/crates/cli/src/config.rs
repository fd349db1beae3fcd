//! Layered settings: built-in defaults < config file < command-line flags.
//!
//! The config file is a flat TOML table. Keys mirror flag names (`n-train`
//! and `n_train` are the same key) or name a tunable of the command being
//! run, e.g. `sigma_row = 2.5` for `calibrate` or `keep_fraction = 0.05` for
//! `enhance --method fftpeak`.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct ConfigFile {
    table: Map<String, Value>,
}

fn norm(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut out = Map::new();
        for (k, v) in table {
            let v = serde_json::to_value(v)?;
            if v.is_object() {
                bail!(
                    "config {}: key {k:?} is a table; the config file is flat",
                    path.display()
                );
            }
            out.insert(norm(&k), v);
        }
        Ok(ConfigFile { table: out })
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.table.keys()
    }

    /// Flag value if given, else the config entry, else `None`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.table.get(&norm(key)) {
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config key {key:?} has the wrong type")),
            None => Ok(None),
        }
    }
}

/// Parse a `key=value` override.
pub fn parse_set(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((norm(k), v.trim().to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}

fn literal(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

/// Apply config-file entries and `--set` overrides to the fields of `base`.
///
/// Config entries that are not fields of `base` are left alone (they may
/// belong to another command); an unknown `--set` key is an error. `fixed`
/// names fields that may not be overridden (enum tags). Returns the merged
/// value and the set of field names it recognised.
pub fn layer<T: Serialize + DeserializeOwned>(
    base: &T,
    file: &ConfigFile,
    sets: &[(String, String)],
    fixed: &[&str],
) -> Result<(T, BTreeSet<String>)> {
    let mut obj = match serde_json::to_value(base)? {
        Value::Object(m) => m,
        _ => bail!("settings do not serialize to a table"),
    };
    let fields: BTreeSet<String> = obj.keys().filter(|k| !fixed.contains(&k.as_str())).cloned().collect();
    for (k, v) in &file.table {
        if fields.contains(k) {
            obj.insert(k.clone(), v.clone());
        }
    }
    for (k, v) in sets {
        if !fields.contains(k) {
            let known: Vec<&str> = fields.iter().map(String::as_str).collect();
            bail!("unknown parameter {k:?}; expected one of: {}", known.join(", "));
        }
        obj.insert(k.clone(), literal(v));
    }
    let merged = serde_json::from_value(Value::Object(obj)).context("invalid parameter value")?;
    Ok((merged, fields))
}
