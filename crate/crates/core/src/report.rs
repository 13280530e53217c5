//! Runtime and communication report in the layout of the published benchmark
//! table: one row per model, seconds and megabytes per sample.

use serde::{Deserialize, Serialize};

use crate::transport::CommStats;

/// Published per-sample figures `(model, runtime s, communication MB)`, shown
/// beside measurements for reference.
pub const REFERENCE: &[(&str, f64, f64)] = &[
    ("mlp", 0.005, 0.296),
    ("lenet5", 0.012, 1.028),
    ("alexnet", 4.472, 242.219),
    ("resnet18", 22.982, 1653.534),
    ("resnet34", 38.414, 2748.205),
    ("resnet50", 121.952, 8076.670),
];

pub fn reference(model: &str) -> Option<(f64, f64)> {
    REFERENCE.iter().find(|(m, _, _)| *m == model).map(|&(_, r, c)| (r, c))
}

pub const MB: f64 = 1_000_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub batch: usize,
    pub total_runtime_s: f64,
    /// Bytes sent by both parties, in MB (10^6 bytes).
    pub total_comm_mb: f64,
    pub runtime_s: f64,
    pub comm_mb: f64,
    pub rounds: u64,
    pub reference_runtime_s: Option<f64>,
    pub reference_comm_mb: Option<f64>,
    /// Measured per-sample communication over the reference figure.
    pub comm_ratio: Option<f64>,
}

impl BenchRow {
    /// `owner` and `cloud` are the two parties' statistics for one session.
    pub fn new(model: &str, batch: usize, runtime_s: f64, owner: &CommStats, cloud: &CommStats) -> Self {
        let bytes = owner.total_sent() + cloud.total_sent();
        let total_comm_mb = bytes as f64 / MB;
        let b = batch.max(1) as f64;
        let reference = reference(model);
        let comm_mb = total_comm_mb / b;
        Self {
            model: model.to_string(),
            batch,
            total_runtime_s: runtime_s,
            total_comm_mb,
            runtime_s: runtime_s / b,
            comm_mb,
            rounds: owner.total_rounds().max(cloud.total_rounds()),
            reference_runtime_s: reference.map(|r| r.0),
            reference_comm_mb: reference.map(|r| r.1),
            comm_ratio: reference.map(|r| comm_mb / r.1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub rows: Vec<BenchRow>,
}

pub const SCHEMA_ID: &str = "privinfer-bench/1";

/// JSON schema of [`BenchReport`], published alongside the output.
pub fn schema() -> serde_json::Value {
    let num = serde_json::json!({"type": "number"});
    let opt_num = serde_json::json!({"type": ["number", "null"]});
    serde_json::json!({
        "$id": SCHEMA_ID,
        "type": "object",
        "required": ["schema", "rows"],
        "properties": {
            "schema": {"const": SCHEMA_ID},
            "rows": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["model", "batch", "total_runtime_s", "total_comm_mb", "runtime_s", "comm_mb", "rounds",
                                 "reference_runtime_s", "reference_comm_mb", "comm_ratio"],
                    "properties": {
                        "model": {"type": "string"},
                        "batch": {"type": "integer", "minimum": 1},
                        "total_runtime_s": num, "total_comm_mb": num, "runtime_s": num, "comm_mb": num,
                        "rounds": {"type": "integer", "minimum": 0},
                        "reference_runtime_s": opt_num, "reference_comm_mb": opt_num, "comm_ratio": opt_num
                    }
                }
            }
        }
    })
}

/// Checks a JSON value against [`schema`]. Supports exactly the constructs the
/// schema uses.
pub fn validate(value: &serde_json::Value) -> Result<(), String> {
    check(&schema(), value, "$")
}

fn check(schema: &serde_json::Value, v: &serde_json::Value, path: &str) -> Result<(), String> {
    use serde_json::Value;
    if let Some(c) = schema.get("const") {
        if c != v {
            return Err(format!("{path}: expected {c}"));
        }
    }
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(|x| x.as_str()).collect(),
            _ => vec![],
        };
        let ok = types.iter().any(|ty| match *ty {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{path}: expected type {types:?}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(|m| m.as_f64()), v.as_f64()) {
        if x < min {
            return Err(format!("{path}: {x} below minimum {min}"));
        }
    }
    if let Some(req) = schema.get("required").and_then(|r| r.as_array()) {
        for key in req.iter().filter_map(|k| k.as_str()) {
            if v.get(key).is_none() {
                return Err(format!("{path}: missing field {key}"));
            }
        }
    }
    if let (Some(props), Some(obj)) = (schema.get("properties").and_then(|p| p.as_object()), v.as_object()) {
        for (key, sub) in props {
            if let Some(field) = obj.get(key) {
                check(sub, field, &format!("{path}.{key}"))?;
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, item) in arr.iter().enumerate() {
            check(items, item, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into())
}

/// Text table with one column per model, mirroring the published layout, plus
/// the reference figures and the communication ratio.
pub fn emit_table(rows: &[BenchRow]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let mut lines: Vec<(String, Vec<String>)> = vec![
        ("".into(), rows.iter().map(|r| r.model.clone()).collect()),
        ("Batch".into(), rows.iter().map(|r| r.batch.to_string()).collect()),
        ("Runtime(s)".into(), rows.iter().map(|r| format!("{:.3}", r.runtime_s)).collect()),
        ("Communication(MB)".into(), rows.iter().map(|r| format!("{:.3}", r.comm_mb)).collect()),
        ("Reference runtime(s)".into(), rows.iter().map(|r| opt(r.reference_runtime_s, 3)).collect()),
        ("Reference comm.(MB)".into(), rows.iter().map(|r| opt(r.reference_comm_mb, 3)).collect()),
        ("Comm. ratio".into(), rows.iter().map(|r| opt(r.comm_ratio, 2)).collect()),
    ];
    let label_w = lines.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let col_w: Vec<usize> =
        (0..rows.len()).map(|i| lines.iter().map(|(_, c)| c[i].len()).max().unwrap_or(0).max(8)).collect();
    let mut out = String::new();
    for (label, cells) in lines.iter_mut() {
        out.push_str(&format!("{label:<label_w$}"));
        for (cell, w) in cells.iter().zip(&col_w) {
            out.push_str(&format!("  {cell:>w$}"));
        }
        out.push('\n');
    }
    out
}
