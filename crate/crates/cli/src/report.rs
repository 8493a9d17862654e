use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::CliError;

/// Significant digits kept in every exported float.
pub const DIGITS: usize = 12;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub config_hash: String,
    pub versions: Map<String, Value>,
    pub seed: u64,
    pub blind: bool,
    pub oracle: bool,
    pub checks: Vec<Check>,
    pub stages: Map<String, Value>,
}

impl Report {
    pub fn new(command: &str, config_hash: String, seed: u64, blind: bool, oracle: bool) -> Self {
        let mut versions = Map::new();
        versions.insert("fracinv-core".into(), Value::String(fracinv_core::VERSION.into()));
        versions.insert("fracinv-cli".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
        Self { command: command.into(), config_hash, versions, seed, blind, oracle, checks: Vec::new(), stages: Map::new() }
    }

    /// Records `value < tolerance`.
    pub fn below(&mut self, id: &str, value: f64, tolerance: f64, detail: impl Into<String>) {
        self.push(id, value < tolerance, value, tolerance, detail);
    }

    /// Records a boolean outcome (`value` is 1 or 0).
    pub fn flag(&mut self, id: &str, passed: bool, detail: impl Into<String>) {
        self.push(id, passed, f64::from(u8::from(passed)), 1.0, detail);
    }

    pub fn push(&mut self, id: &str, passed: bool, value: f64, tolerance: f64, detail: impl Into<String>) {
        self.checks.push(Check { id: id.into(), passed, value, tolerance, detail: detail.into() });
    }

    pub fn stage(&mut self, name: &str, value: impl Serialize) -> Result<(), CliError> {
        let v = serde_json::to_value(value).map_err(|e| CliError::Usage(e.to_string()))?;
        self.stages.insert(name.into(), v);
        Ok(())
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        let mut s = serde_json::to_string_pretty(&round_value(v)).expect("json");
        s.push('\n');
        s
    }
}

/// `x` rounded to [`DIGITS`] significant digits; non-finite values become null.
pub fn round(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let r: f64 = format!("{:.*e}", DIGITS - 1, x).parse().expect("float");
    Number::from_f64(r).map_or(Value::Null, Value::Number)
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => round(n.as_f64().expect("f64")),
        Value::Array(a) => Value::Array(a.into_iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_value(v))).collect()),
        other => other,
    }
}

/// Float cell for CSV output.
pub fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{:.*e}", DIGITS - 1, x)
    } else {
        x.to_string()
    }
}

/// A run directory that refuses to reuse a non-empty location unless forced.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, force: bool) -> Result<Self, CliError> {
        if root.exists() {
            let busy = fs::read_dir(root).map(|mut d| d.next().is_some()).unwrap_or(true);
            if busy && !force {
                return Err(CliError::Usage(format!("{} exists and is not empty; pass --force to overwrite", root.display())));
            }
        }
        fs::create_dir_all(root).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, &s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_stable() {
        assert_eq!(round(0.1 + 0.2), round(0.3));
        assert_eq!(round(f64::INFINITY), Value::Null);
        assert_eq!(cell(1.0), "1.00000000000e0");
    }
}
