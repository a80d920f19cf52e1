//! Config files and flag merging.
//!
//! A config file is a flat TOML table (or a JSON object when the file ends in
//! `.json`) whose keys are the long flag names with underscores. Values are resolved
//! in this order, later winning: built-in defaults, the config file, command-line
//! flags. Relative paths in a config file are taken relative to the file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::failure::{with_path, CliResult, Failure};

/// Keys holding paths, resolved against the config file's directory.
const PATH_KEYS: &[&str] = &["expr", "fit", "out_dir", "weights", "a", "b", "genes"];

pub fn load_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = with_path(std::fs::read_to_string(path), path)?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?
    };
    let Value::Object(mut map) = value else {
        return Err(Failure::invalid(format!("{}: config must be a table", path.display())));
    };
    let base = path.parent().unwrap_or(Path::new(""));
    for key in PATH_KEYS {
        if let Some(Value::String(p)) = map.get(*key) {
            let p = PathBuf::from(p);
            if p.is_relative() {
                map.insert(key.to_string(), Value::String(base.join(p).to_string_lossy().into_owned()));
            }
        }
    }
    Ok(map)
}

/// The flags that were actually given, as config keys. Unset options and
/// switches left off do not override the file.
pub fn flag_overrides<T: Serialize>(flags: &T) -> CliResult<Map<String, Value>> {
    let Value::Object(map) = serde_json::to_value(flags)? else {
        unreachable!("flag structs serialize to objects")
    };
    Ok(map
        .into_iter()
        .filter(|(_, v)| match v {
            Value::Null | Value::Bool(false) => false,
            Value::Array(a) => !a.is_empty(),
            _ => true,
        })
        .collect())
}

/// Merges layers left to right and deserializes the result.
pub fn resolve<T: DeserializeOwned>(layers: Vec<Map<String, Value>>) -> CliResult<T> {
    let mut merged = Map::new();
    for layer in layers {
        merged.extend(layer);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::invalid(format!("configuration: {e}")))
}

/// Rejects keys outside `allowed`, for settings that cannot use
/// `deny_unknown_fields`.
pub fn check_keys(map: &Map<String, Value>, allowed: &[&str]) -> CliResult<()> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Failure::invalid(format!("configuration: unknown key {k:?}"))),
        None => Ok(()),
    }
}
