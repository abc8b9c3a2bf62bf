//! Metric logs and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use sobolev_core::training::LogEntry;

use crate::error::{FormatError, Result};

pub const CSV_HEADER: &str = "iteration,loss_val,loss_der,psnr_eval";

/// One row per log entry. Floats use the shortest round-trip form, so equal
/// runs give equal bytes.
pub fn metrics_csv(log: &[LogEntry]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for e in log {
        writeln!(
            s,
            "{},{},{},{}",
            e.iteration, e.loss_val, e.loss_der, e.psnr_eval
        )
        .expect("write to string");
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Finite numbers as JSON numbers, the rest as `"inf"`, `"-inf"` or `"nan"`.
pub fn json_number(v: f64) -> Value {
    match serde_json::Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None if v.is_nan() => Value::String("nan".into()),
        None if v > 0.0 => Value::String("inf".into()),
        None => Value::String("-inf".into()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, Value>,
    pub duration_secs: f64,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            status: "running".into(),
            failure: None,
            warnings: Vec::new(),
            seed: None,
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
            duration_secs: 0.0,
        }
    }

    /// Records the sha256 of an input file.
    pub fn input(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(name.into(), sha256_hex(bytes));
    }

    /// Records the sha256 of an output artefact.
    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.into(), sha256_hex(bytes));
    }

    pub fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), json_number(v));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_text(path, &text)
    }
}
