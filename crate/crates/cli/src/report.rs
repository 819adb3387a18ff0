//! CSV and JSON emission. Non-finite values are written as the literal
//! strings `inf`, `-inf` and `nan`.

use std::fmt::Write as _;
use std::path::Path;

use mid_core::metrics::finite_mean_std;
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};

pub fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// Number when finite, sentinel string otherwise.
pub fn json_value(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(fmt_value(v))
    }
}

pub fn hex_hash(h: u64) -> String {
    format!("{h:016x}")
}

/// Comma-separated table with a header row and LF line endings.
pub struct Table {
    text: String,
    columns: usize,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
        Table {
            text: format!("{}\n", cols.join(",")),
            columns: cols.len(),
        }
    }

    pub fn row(&mut self, label: &str, values: &[f64]) {
        debug_assert_eq!(values.len() + 1, self.columns);
        self.text.push_str(label);
        for v in values {
            write!(self.text, ",{}", fmt_value(*v)).unwrap();
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Per-column mean/std over finite entries, with the finite count.
pub fn column_summary(names: &[String], rows: &[Vec<f64>]) -> Value {
    let mut out = Map::new();
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (mean, std, n) = finite_mean_std(&col);
        let (mean, std) = if n == 0 {
            (Value::Null, Value::Null)
        } else {
            (json_value(mean), json_value(std))
        };
        out.insert(
            name.clone(),
            json!({ "mean": mean, "std": std, "finite_count": n, "non_finite_count": col.len() - n }),
        );
    }
    Value::Object(out)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}
