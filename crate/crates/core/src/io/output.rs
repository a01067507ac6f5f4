//! CSV tables and JSON reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{NlsError, Result};
use crate::model::ModelParams;

/// Version stamped into every report.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed scientific format with 17 significant digits; parses back to the
/// same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header plus string rows, written as comma-separated values.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(&self.header).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
        let header = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_error)?;
        Ok(Self { header, rows })
    }

    /// Column `name` parsed as numbers.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| NlsError::Io(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| r[idx].parse::<f64>().map_err(|_| NlsError::Io(format!("bad number `{}` in `{name}`", r[idx]))))
            .collect()
    }
}

fn csv_error(e: csv::Error) -> NlsError {
    NlsError::Io(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamsEcho {
    pub hbar: f64,
    pub mass: f64,
    pub length: f64,
    pub eta: f64,
    pub q: f64,
    pub energy_scale: f64,
}

impl From<&ModelParams> for ParamsEcho {
    fn from(p: &ModelParams) -> Self {
        Self { hbar: p.hbar(), mass: p.mass(), length: p.length(), eta: p.eta(), q: p.q(), energy_scale: p.energy_scale() }
    }
}

/// One named pass/fail check of a run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    /// Passes when `value <= limit`.
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.to_string(), passed: value <= limit, value, limit }
    }

    pub fn flag(name: &str, passed: bool) -> Self {
        Self { name: name.to_string(), passed, value: f64::from(u8::from(passed)), limit: 1.0 }
    }
}

/// Result of one command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: String,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    pub report: Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Names of failed checks.
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// Writes `report.json`: version, command, parameter echo, checks and the
/// command-specific body.
pub fn write_report(dir: &Path, command: &str, params: &ModelParams, checks: &[Check], body: Value) -> Result<(PathBuf, Value)> {
    let passed = checks.iter().all(|c| c.passed);
    let report = json!({
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "params": ParamsEcho::from(params),
        "passed": passed,
        "checks": checks,
        "result": body,
    });
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| NlsError::Io(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    Ok((path, report))
}

/// JSON for a float that may be infinite or NaN.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(fmt_f64(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_format() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-0.03125), "-3.1250000000000000e-2");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        assert_eq!(fmt_f64(f64::INFINITY).parse::<f64>().unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn format_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![fmt_f64(1.0 / 3.0), "unbounded".into()]);
        t.push(vec![fmt_f64(-2.5e-300), fmt_f64(7.0)]);
        t.write(&path).unwrap();
        let back = Table::read(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("a").unwrap(), vec![1.0 / 3.0, -2.5e-300]);
        assert!(back.column("b").is_err());
    }
}
