//! Report serialization: JSON with sorted keys and a schema version, written
//! byte-identically for identical inputs.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// `{"schema_version": .., "command": .., <fields of body>}` as pretty JSON
/// with sorted keys and a trailing newline.
pub fn to_json<T: Serialize>(command: &str, body: &T) -> Result<String> {
    let mut map = Map::new();
    match serde_json::to_value(body)? {
        Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("report".into(), other);
        }
    }
    map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    map.insert("command".into(), Value::from(command));
    // serde_json's default map is ordered by key, nested objects included
    let mut text = serde_json::to_string_pretty(&Value::Object(map))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(path: &Path, command: &str, body: &T) -> Result<()> {
    std::fs::write(path, to_json(command, body)?)?;
    Ok(())
}
