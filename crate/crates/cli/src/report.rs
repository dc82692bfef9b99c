//! Report envelope, tagged numbers and output rendering.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::{Format, RunConfig};
use crate::error::CliError;

pub const REPORT_SCHEMA: &str = "bellforge.report/1";

/// How a number was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Sampled,
    CcDerived,
    ExactLhv,
    Enumeration,
    ClosedForm,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Sampled => "sampled",
            Method::CcDerived => "cc-derived",
            Method::ExactLhv => "exact-lhv",
            Method::Enumeration => "enumeration",
            Method::ClosedForm => "closed-form",
        }
    }
}

/// A numeric result with its method tag. Non-finite values serialize as null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Num {
    pub value: f64,
    pub method: Method,
}

impl Num {
    pub fn new(value: f64, method: Method) -> Self {
        Self { value, method }
    }
}

/// Flat table for `--format csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Shortest round-trip text for a float, empty when not finite.
pub fn cell(v: f64) -> String {
    if v.is_finite() {
        serde_json::to_string(&v).unwrap_or_default()
    } else if v.is_nan() {
        String::new()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Finished {
    pub results: Value,
    pub csv: CsvTable,
    pub warnings: Vec<String>,
    /// Failed checks; any entry makes the run exit with code 3.
    pub failures: Vec<String>,
}

impl Finished {
    pub fn new(results: impl Serialize, csv: CsvTable) -> Result<Self, CliError> {
        Ok(Self {
            results: to_value(results)?,
            csv,
            warnings: Vec::new(),
            failures: Vec::new(),
        })
    }
}

pub fn to_value(v: impl Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Invariant(format!("serialization failed: {e}")))
}

/// Full report as canonical JSON (sorted keys, shortest floats).
pub fn render_json(cfg: &RunConfig, done: &Finished, wall_clock: Option<f64>) -> Result<String, CliError> {
    let mut report = serde_json::json!({
        "schema_version": REPORT_SCHEMA,
        "library_version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.name(),
        "config": to_value(cfg)?,
        "results": done.results,
        "warnings": done.warnings,
        "failures": done.failures,
    });
    if let Some(s) = wall_clock {
        report["wall_clock_s"] = to_value(s)?;
    }
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Invariant(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn render_csv(table: &CsvTable) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Invariant(format!("csv output failed: {e}"));
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Invariant(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Invariant(e.to_string()))
}

pub fn render(cfg: &RunConfig, done: &Finished, wall_clock: Option<f64>) -> Result<String, CliError> {
    match cfg.format {
        Format::Json => render_json(cfg, done, wall_clock),
        Format::Csv => render_csv(&done.csv),
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let fail = |e: std::io::Error| CliError::Usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(text.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_round_trip() {
        assert_eq!(cell(0.1), "0.1");
        assert_eq!(cell(f64::INFINITY), "inf");
        assert_eq!(cell(1.0), "1.0");
        let v: f64 = cell(0.8070398173094).parse().unwrap();
        assert_eq!(v, 0.8070398173094);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_atomic(&path, "a").unwrap();
        write_atomic(&path, "bb").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "bb");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn csv_quotes_fields() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(render_csv(&t).unwrap(), "a,b\n\"x,y\",1\n");
    }
}
