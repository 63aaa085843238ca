//! JSON reports and text tables.

use std::fmt::Write as _;

use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Report envelope. `serde_json` maps keep keys sorted, so serializing the
/// same values always yields the same bytes.
pub fn envelope(command: &str, config: Value, results: Value, warnings: &[String], error: Option<Value>, timing: Value) -> Value {
    let mut v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "results": results,
        "warnings": warnings,
        "timing": timing,
    });
    if let Some(e) = error {
        v["error"] = e;
    }
    v
}

pub fn to_bytes(v: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("json values serialize");
    out.push(b'\n');
    out
}

/// Plain fixed-width table.
pub fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: &[String]| {
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.push('\n');
    };
    line(&mut s, header);
    let total = width.iter().sum::<usize>() + 2 * (width.len().saturating_sub(1));
    s.push_str(&"-".repeat(total));
    s.push('\n');
    for r in rows {
        line(&mut s, r);
    }
    s
}

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "nan".into()
    }
}

pub fn se(v: f64) -> String {
    format!("({})", num(v))
}

/// Signed value that prints exact zeros as `0.0000`.
pub fn delta(v: f64) -> String {
    if v == 0.0 {
        "0.0000".into()
    } else {
        format!("{v:+.4}")
    }
}
