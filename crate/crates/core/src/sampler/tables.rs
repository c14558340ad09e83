//! Node/edge input tables: CSV or NDJSON rows keyed by column name.
//!
//! CSV carries scalar cells only; vector and ragged features need NDJSON,
//! where cells are JSON arrays. Node tables use an `#id` column, edge tables
//! use `source_id` and `target_id`.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub type RawRow = BTreeMap<String, Value>;

/// Read a table, dispatching on extension: `.csv` vs `.ndjson`/`.jsonl`.
pub fn read_table(path: &Path) -> Result<Vec<RawRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read table {}", path.display()), e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_csv(&text),
        Some("ndjson") | Some("jsonl") => parse_ndjson(&text),
        other => Err(Error::InvalidArgument {
            op: "read_table".into(),
            message: format!(
                "unsupported table extension {other:?} for {} (use .csv or .ndjson)",
                path.display()
            ),
        }),
    }
}

pub fn parse_ndjson(text: &str) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| Error::InvalidArgument {
            op: "parse_ndjson".into(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        match value {
            Value::Object(map) => rows.push(map.into_iter().collect()),
            _ => {
                return Err(Error::InvalidArgument {
                    op: "parse_ndjson".into(),
                    message: format!("line {}: expected a JSON object", lineno + 1),
                })
            }
        }
    }
    Ok(rows)
}

/// Minimal CSV: comma separated, double-quote quoting with `""` escapes.
/// Cells stay strings; dtype conversion happens against the schema.
pub fn parse_csv(text: &str) -> Result<Vec<RawRow>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break split_csv_line(line)?,
            None => return Ok(Vec::new()),
        }
    };
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv_line(line)?;
        if cells.len() != header.len() {
            return Err(Error::InvalidArgument {
                op: "parse_csv".into(),
                message: format!(
                    "line {}: {} cells but header has {} columns",
                    lineno + 1,
                    cells.len(),
                    header.len()
                ),
            });
        }
        let row: RawRow = header
            .iter()
            .cloned()
            .zip(cells.into_iter().map(Value::String))
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

fn split_csv_line(line: &str) -> Result<Vec<String>> {
    let mut cells = Vec::new();
    let mut cell = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        cell.push('"');
                    } else {
                        quoted = false;
                    }
                }
                c => cell.push(c),
            }
        } else {
            match c {
                '"' if cell.is_empty() => quoted = true,
                ',' => cells.push(std::mem::take(&mut cell)),
                c => cell.push(c),
            }
        }
    }
    if quoted {
        return Err(Error::InvalidArgument {
            op: "parse_csv".into(),
            message: format!("unterminated quote in line {line:?}"),
        });
    }
    cells.push(cell);
    Ok(cells)
}

/// A table cell as a plain identifier string.
pub fn value_as_id(value: &Value, column: &str) -> Result<String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::InvalidArgument {
            op: "value_as_id".into(),
            message: format!("column {column:?}: expected an id, got {other}"),
        }),
    }
}
