//! TOML run configuration.
//!
//! A config file holds any subset of the [`ScenarioConfig`] tree; missing keys
//! keep the value of the base config (the paper defaults, or a preset). Keys the
//! simulator does not know are rejected with their full dotted path, so a typo
//! such as `selection.stepp` fails instead of being silently ignored.
//!
//! ```toml
//! scenario = "tuma"
//! rounds = 100
//!
//! [selection]
//! strategy = "self"
//! step = 0.004
//!
//! [channel]
//! blocklength = 20
//! ```

use std::fs;
use std::path::Path;

use toml::{Table, Value};
use ufl_core::config::ScenarioConfig;

use crate::{Result, SimError};

/// TOML integers are signed 64-bit.
fn check_seed(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.seed > i64::MAX as u64 {
        return Err(SimError::config("seed", "must fit in a signed 64-bit integer"));
    }
    Ok(())
}

pub fn to_table(cfg: &ScenarioConfig) -> Result<Table> {
    check_seed(cfg)?;
    match Value::try_from(cfg).map_err(|e| SimError::config("config", e.to_string()))? {
        Value::Table(t) => Ok(t),
        _ => unreachable!("a struct serializes to a table"),
    }
}

/// Reconciles `new` with the type of the value it replaces. TOML writes `1` as
/// an integer, which must still be accepted for float fields.
fn coerce(old: &Value, new: Value) -> Value {
    match (old, new) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (Value::Array(o), Value::Array(n)) if !o.is_empty() => {
            Value::Array(n.into_iter().map(|v| coerce(&o[0], v)).collect())
        }
        (_, n) => n,
    }
}

/// Overlays `update` onto `base`. Every key of `update` must already exist.
pub fn merge(base: &mut Table, update: Table, prefix: &str) -> Result<()> {
    for (key, value) in update {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        let Some(slot) = base.get_mut(&key) else {
            return Err(SimError::config(path, "unknown key"));
        };
        match (slot, value) {
            (Value::Table(inner), Value::Table(v)) => merge(inner, v, &path)?,
            (Value::Table(_), _) => return Err(SimError::config(path, "expected a table")),
            (slot, v) => *slot = coerce(slot, v),
        }
    }
    Ok(())
}

/// Parses the right-hand side of a `--set key=value` override. Anything that is
/// not a TOML literal is taken as a bare string, so `selection.strategy=poc`
/// works without quotes.
fn parse_literal(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SimError::config(assignment, "override must look like key=value"))?;
    let path = path.trim();
    let mut update = Table::new();
    let parts: Vec<&str> = path.split('.').collect();
    let mut leaf = parse_literal(raw.trim());
    for (i, part) in parts.iter().enumerate().rev() {
        if part.is_empty() {
            return Err(SimError::config(path, "empty key segment"));
        }
        if i == 0 {
            update.insert(part.to_string(), leaf);
            break;
        }
        let mut t = Table::new();
        t.insert(part.to_string(), leaf);
        leaf = Value::Table(t);
    }
    merge(table, update, "")
}

pub fn from_table(table: Table) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| SimError::config("config", e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    text.parse::<Table>()
        .map_err(|e| SimError::config(path.display().to_string(), e.message().to_string()))
}

/// Resolves `base`, then the optional file, then each override in order.
pub fn parse_config(base: &ScenarioConfig, path: Option<&Path>, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut table = to_table(base)?;
    if let Some(p) = path {
        merge(&mut table, read_table(p)?, "")?;
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}

pub fn to_toml_string(cfg: &ScenarioConfig) -> Result<String> {
    check_seed(cfg)?;
    toml::to_string_pretty(cfg).map_err(|e| SimError::config("config", e.to_string()))
}
