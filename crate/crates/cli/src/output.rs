use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

pub const SCHEMA: &str = "qvi-extremal/1";

/// One asserted check of a command; the exit code is 0 iff all pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// `"<="` or `">="`: how `value` is compared with `tolerance`.
    pub relation: &'static str,
    pub pass: bool,
}

impl CheckLine {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: "<=",
            pass: value <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            relation: ">=",
            pass: value >= tolerance,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            relation: ">=",
            pass: ok,
        }
    }
}

/// Machine-readable record written by every command, including failed ones.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub command: String,
    /// The property or result the command exercises.
    pub exercises: &'static str,
    pub pass: bool,
    pub checks: Vec<CheckLine>,
    pub results: Value,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub error: Option<CliError>,
    pub config: RunConfig,
}

/// What a command produced before the summary is assembled.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<CheckLine>,
    pub results: Value,
    pub warnings: Vec<String>,
}

/// Output directory that remembers the files written into it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a CSV with the given header and rows.
    pub fn csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = f64>,
    {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.into_iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Nodal field as `x,value`.
    pub fn field(&mut self, name: &str, nodes: &[f64], values: &[f64]) -> Result<(), CliError> {
        self.csv(
            name,
            &["x", "value"],
            nodes.iter().zip(values).map(|(&x, &v)| [x, v]),
        )
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(self.path(name), text + "\n")?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
