//! Deterministic JSON serialization: sorted keys, floats rounded to nine
//! significant digits.

use crate::error::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Rounds to nine significant digits.
pub fn round_sig9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64(round_sig9(f)).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        // serde_json's default map is ordered by key.
        Value::Object(map) => {
            Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        other => other,
    }
}

/// Canonical value form of `value`.
pub fn to_canonical_value<T: Serialize>(value: &T) -> Result<Value> {
    Ok(canonicalize(serde_json::to_value(value)?))
}

/// Pretty-printed canonical JSON with a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&to_canonical_value(value)?)?;
    s.push('\n');
    Ok(s)
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let digest = Sha256::digest(to_canonical_json(value)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Run directory name: seed plus the first 12 hex digits of the config hash.
pub fn run_dir_name<T: Serialize>(seed: u64, config: &T) -> Result<String> {
    Ok(format!("seed{seed}-{}", &config_hash(config)?[..12]))
}
