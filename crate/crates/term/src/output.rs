//! Deterministic artifact writers: CSV tables and the JSON run summary.
//! Floats print with Rust's shortest-roundtrip formatting and JSON objects
//! serialize with sorted keys, so identical runs produce identical bytes.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;

/// One CSV cell.
#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    S(String),
    B(bool),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::F(v) => write!(f, "{v}"),
            Cell::S(v) => write!(f, "{v}"),
            Cell::B(v) => write!(f, "{v}"),
        }
    }
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<Cell>],
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

/// A named pass/fail check recorded in the summary.
#[derive(Debug, Clone)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Assertion {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn write_summary(
    path: &Path,
    task: &str,
    inputs_hash: &str,
    headline: Value,
    assertions: &[Assertion],
) -> std::io::Result<bool> {
    let pass = assertions.iter().all(|a| a.passed);
    let assertions_json: Vec<Value> = assertions
        .iter()
        .map(|a| {
            serde_json::json!({
                "name": a.name,
                "passed": a.passed,
                "detail": a.detail,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "task": task,
        "inputs_hash": inputs_hash,
        "headline": headline,
        "pass": pass,
        "assertions": assertions_json,
    });
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string_pretty(&doc)?)?;
    Ok(pass)
}
