//! Flat `key = value` text files mapped onto serde structs.
//!
//! Keys are dotted paths into the struct, e.g. `model.gate.mode`. Lines
//! starting with `#` are comments. Lists use JSON array syntax; strings may be
//! bare. Keys absent from the file keep their default values.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Every leaf key with its value, one `key = value` line each, sorted by key.
pub fn dump<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("plain data serializes");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    lines.sort();
    lines
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// Parses `text` on top of `T::default()`. Unknown keys and values of the
/// wrong type are errors.
pub fn parse<T: Serialize + DeserializeOwned + Default>(text: &str, path: &Path) -> Result<T> {
    let mut root = serde_json::to_value(T::default()).expect("plain data serializes");
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected `key = value`"))?;
        let (key, val) = (key.trim(), val.trim());
        let slot = lookup(&mut root, key)
            .ok_or_else(|| Error::parse(path, idx + 1, format!("unknown key {key:?}")))?;
        *slot = parse_value(slot, val)
            .ok_or_else(|| Error::parse(path, idx + 1, format!("bad value {val:?} for {key}")))?;
    }
    serde_json::from_value(root).map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn lookup<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    let mut cur = root;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part)?,
            _ => return None,
        };
    }
    (!cur.is_object()).then_some(cur)
}

fn parse_value(template: &Value, text: &str) -> Option<Value> {
    match template {
        Value::String(_) => Some(Value::String(text.trim_matches('"').to_string())),
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => text
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Value::from),
        Value::Array(_) => serde_json::from_str::<Value>(text)
            .ok()
            .filter(Value::is_array),
        Value::Null | Value::Object(_) => None,
    }
}
