//! Line-delimited key-value serialization ("machine-record").
//!
//! Any serde value is flattened into one line per leaf:
//!
//! ```text
//! schema_version=1
//! kind="complexity-report"
//! lexical.entropy_by_order.1=5.512
//! geometric[0].encoder_tag="lda-K8-a6.25-b0.01-i500-s0"
//! geometric=[]
//! ```
//!
//! Keys are dotted object paths with `[i]` array indices; values are JSON
//! scalars, or `[]` / `{}` for empty containers. Object keys are emitted in
//! sorted order and floats use the shortest round-trip representation, so the
//! output is byte-stable and parses back to the same value.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;
const VERSION_KEY: &str = "schema_version";

fn plain_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn flatten_into(prefix: &str, value: &Value, out: &mut String) -> Result<()> {
    match value {
        Value::Object(map) if !map.is_empty() => {
            for (key, child) in map {
                if !plain_key(key) {
                    return Err(Error::invalid(format!("record key {key:?} is not plain")));
                }
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                flatten_into(&path, child, out)?;
            }
        }
        Value::Array(items) if !items.is_empty() => {
            for (i, child) in items.iter().enumerate() {
                flatten_into(&format!("{prefix}[{i}]"), child, out)?;
            }
        }
        leaf => {
            out.push_str(prefix);
            out.push('=');
            out.push_str(&serde_json::to_string(leaf).expect("JSON scalars serialize"));
            out.push('\n');
        }
    }
    Ok(())
}

/// Serializes `value` (which must serialize to an object) as a record.
pub fn to_record<T: Serialize>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
    let Value::Object(map) = tree else {
        return Err(Error::invalid("only objects can be written as records"));
    };
    let mut out = format!("{VERSION_KEY}={SCHEMA_VERSION}\n");
    for (key, child) in &map {
        if key == VERSION_KEY {
            continue;
        }
        if !plain_key(key) {
            return Err(Error::invalid(format!("record key {key:?} is not plain")));
        }
        flatten_into(key, child, &mut out)?;
    }
    Ok(out)
}

enum Segment {
    Key(String),
    Index(usize),
}

fn parse_path(path: &str, line: usize) -> Result<Vec<Segment>> {
    let bad = |reason: &str| Error::RecordParse {
        line,
        reason: format!("{reason} in key {path:?}"),
    };
    let mut segments = Vec::new();
    let mut rest = path;
    let mut first = true;
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix('[') {
            let close = after.find(']').ok_or_else(|| bad("unclosed index"))?;
            let index = after[..close].parse().map_err(|_| bad("bad index"))?;
            segments.push(Segment::Index(index));
            rest = &after[close + 1..];
        } else {
            let body = if first {
                rest
            } else {
                rest.strip_prefix('.').ok_or_else(|| bad("expected '.'"))?
            };
            let end = body.find(['.', '[']).unwrap_or(body.len());
            let key = &body[..end];
            if !plain_key(key) {
                return Err(bad("empty or invalid segment"));
            }
            segments.push(Segment::Key(key.to_owned()));
            rest = &body[end..];
        }
        first = false;
    }
    Ok(segments)
}

fn insert(slot: &mut Value, segments: &[Segment], leaf: Value, line: usize) -> Result<()> {
    let conflict = || Error::RecordParse {
        line,
        reason: "key conflicts with an earlier line".into(),
    };
    let Some((head, tail)) = segments.split_first() else {
        if !slot.is_null() {
            return Err(conflict());
        }
        *slot = leaf;
        return Ok(());
    };
    match head {
        Segment::Key(key) => {
            if slot.is_null() {
                *slot = Value::Object(Map::new());
            }
            let map = slot.as_object_mut().ok_or_else(conflict)?;
            insert(
                map.entry(key.clone()).or_insert(Value::Null),
                tail,
                leaf,
                line,
            )
        }
        Segment::Index(index) => {
            if slot.is_null() {
                *slot = Value::Array(Vec::new());
            }
            let items = slot.as_array_mut().ok_or_else(conflict)?;
            if *index > items.len() {
                return Err(Error::RecordParse {
                    line,
                    reason: format!("array index {index} skips earlier elements"),
                });
            }
            if *index == items.len() {
                items.push(Value::Null);
            }
            insert(&mut items[*index], tail, leaf, line)
        }
    }
}

/// Rebuilds the value tree of a record, checking its schema version.
pub fn parse_record_value(text: &str) -> Result<Value> {
    let mut root = Value::Object(Map::new());
    let mut version = None;
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let (key, literal) = raw.split_once('=').ok_or_else(|| Error::RecordParse {
            line,
            reason: "expected key=value".into(),
        })?;
        let leaf: Value = serde_json::from_str(literal).map_err(|e| Error::RecordParse {
            line,
            reason: e.to_string(),
        })?;
        if key == VERSION_KEY {
            version = leaf.as_u64();
            continue;
        }
        insert(&mut root, &parse_path(key, line)?, leaf, line)?;
    }
    match version {
        Some(SCHEMA_VERSION) => Ok(root),
        Some(other) => Err(Error::RecordParse {
            line: 0,
            reason: format!("unsupported schema_version {other}"),
        }),
        None => Err(Error::RecordParse {
            line: 0,
            reason: "missing schema_version".into(),
        }),
    }
}

pub fn from_record<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value = parse_record_value(text)?;
    serde_json::from_value(value).map_err(|e| Error::RecordParse {
        line: 0,
        reason: e.to_string(),
    })
}
