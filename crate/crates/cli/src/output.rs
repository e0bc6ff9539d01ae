//! Tables with a metadata header and a pass/fail block, as CSV or JSON.

use crate::args::Format;
use anyhow::Result;
use serde::Serialize;
use std::io::Write;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// `|value| ≤ bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value.abs() <= bound, format!("{value:e} <= {bound:e}"))
    }

    /// `|value/target − 1| ≤ rel`.
    pub fn relative(name: impl Into<String>, value: f64, target: f64, rel: f64) -> Self {
        let err = (value / target - 1.0).abs();
        Self::new(name, err <= rel, format!("{value} vs {target} (rel err {err:.4}, tol {rel})"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub timestamp: String,
    #[serde(serialize_with = "as_map")]
    pub config: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(command: &str, config: Vec<(String, String)>, columns: &[&str]) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            config,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write(&self, format: Format, mut w: impl Write) -> Result<()> {
        match format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, self)?;
                writeln!(w)?;
            }
            Format::Csv => {
                writeln!(w, "# pfclt {}", self.version)?;
                writeln!(w, "# command: {}", self.command)?;
                let cfg: Vec<String> = self.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(w, "# config: {}", cfg.join("; "))?;
                writeln!(w, "# timestamp: {}", self.timestamp)?;
                {
                    let mut csv = csv::Writer::from_writer(&mut w);
                    csv.write_record(&self.columns)?;
                    for r in &self.rows {
                        csv.write_record(r)?;
                    }
                    csv.flush()?;
                }
                for c in &self.checks {
                    let status = if c.passed { "PASS" } else { "FAIL" };
                    writeln!(w, "#check,{},{status},{}", c.name, c.detail)?;
                }
            }
        }
        Ok(())
    }
}

fn as_map<S: serde::Serializer>(pairs: &[(String, String)], s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(pairs.iter().map(|(k, v)| (k, v)))
}

/// Shortest round-trip form; exponent notation away from unit scale.
pub fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && !(1e-4..1e15).contains(&v.abs()) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}
