//! Layered configuration: defaults, then a JSON file, then flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Reads a JSON config file. Top-level keys apply to every command; an
/// object under the command's name applies to that command only and wins.
pub fn load_file(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)?;
    let Value::Object(mut root) = serde_json::from_str::<Value>(&text)? else {
        return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
    };
    let section = match root.remove(command) {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(Error::Config(format!("section {command:?} must be an object"))),
        None => Map::new(),
    };
    root.extend(section);
    Ok(root)
}

/// `defaults < file < flags`. Flags serialize with unset options omitted.
pub fn merge<T, F>(defaults: &T, file: &Map<String, Value>, flags: &F) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    F: Serialize,
{
    let Value::Object(mut merged) = serde_json::to_value(defaults)? else {
        return Err(Error::Config("defaults must serialize to an object".into()));
    };
    for (k, v) in file {
        if merged.contains_key(k) {
            merged.insert(k.clone(), v.clone());
        }
    }
    if let Value::Object(f) = serde_json::to_value(flags)? {
        for (k, v) in f {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    Ok(serde_json::from_value(Value::Object(merged))?)
}
