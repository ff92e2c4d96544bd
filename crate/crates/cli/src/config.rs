//! JSON config files: a flat object whose keys are flag names (`-` or `_`)
//! and whose values replace the flag values.

use std::path::Path;

use gdmap::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::args::bad;

/// Keys that only make sense on the command line.
const FLAG_ONLY: [&str; 1] = ["config"];

pub(crate) fn read_object(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(bad("$", "the config file must hold a JSON object")),
        Err(source) => Err(Error::Json { path: path.to_path_buf(), source }),
    }
}

/// Replaces the fields of `args` named by `config`. Unknown keys and values
/// whose JSON type differs from the flag's are reported with their key.
pub(crate) fn overlay<T: Serialize + DeserializeOwned>(
    args: &T,
    config: &Map<String, Value>,
    command: &str,
) -> Result<T> {
    let Value::Object(mut merged) = serde_json::to_value(args).expect("flag structs serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (raw_key, value) in config {
        let key = raw_key.replace('-', "_");
        if key == "command" {
            match value.as_str() {
                Some(c) if c == command => continue,
                Some(c) => return Err(bad(raw_key, format!("names `{c}` but the subcommand is `{command}`"))),
                None => return Err(bad(raw_key, "expected a string")),
            }
        }
        if FLAG_ONLY.contains(&key.as_str()) {
            return Err(bad(raw_key, "only allowed on the command line"));
        }
        let Some(current) = merged.get(&key) else {
            return Err(bad(raw_key, format!("unknown key for `{command}`")));
        };
        check_type(current, value).map_err(|m| bad(raw_key, m))?;
        merged.insert(key, value.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| bad("$", e.to_string()))
}

fn check_type(current: &Value, new: &Value) -> std::result::Result<(), String> {
    match (current, new) {
        (Value::Number(old), Value::Number(n)) => {
            if old.is_u64() && !n.is_u64() {
                Err(format!("expected a non-negative integer, got {n}"))
            } else {
                Ok(())
            }
        }
        (Value::String(_), Value::String(_)) | (Value::Bool(_), Value::Bool(_)) => Ok(()),
        (Value::Number(old), _) if old.is_u64() => Err(format!("expected a non-negative integer, got {new}")),
        (Value::Number(_), _) => Err(format!("expected a number, got {new}")),
        (Value::String(_), _) => Err(format!("expected a string, got {new}")),
        (Value::Bool(_), _) => Err(format!("expected true or false, got {new}")),
        _ => Err(format!("unsupported value {new}")),
    }
}
