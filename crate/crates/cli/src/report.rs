//! Self-contained experiment reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sparse_hw::hash::json_hash;

use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    /// Name of the invariant checked.
    pub invariant: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    pub config: Value,
    /// SHA-256 of the echoed config.
    pub config_hash: String,
    /// Every number the run produced; independent of thread count and timing.
    pub numerics: Value,
    pub verdicts: Vec<Verdict>,
    /// `pass`, `fail` or `degenerate instance`.
    pub outcome: String,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    /// CSV sidecars written next to the report.
    pub tables: Vec<String>,
}

/// Accumulates numerics, verdicts and sidecar tables for one command.
pub struct Builder {
    command: String,
    config: Value,
    numerics: serde_json::Map<String, Value>,
    verdicts: Vec<Verdict>,
    tables: Vec<(String, String)>,
    degenerate: bool,
    started: Instant,
}

impl Builder {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            numerics: Default::default(),
            verdicts: Vec::new(),
            tables: Vec::new(),
            degenerate: false,
            started: Instant::now(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl Serialize) -> Result<(), CliError> {
        let v = serde_json::to_value(value).map_err(|e| CliError::Run(e.to_string()))?;
        self.numerics.insert(key.to_string(), v);
        Ok(())
    }

    pub fn verdict(&mut self, invariant: &str, passed: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict {
            invariant: invariant.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn table(&mut self, name: &str, csv: String) {
        self.tables.push((format!("{name}.csv"), csv));
    }

    pub fn degenerate(&mut self) {
        self.degenerate = true;
    }

    /// Finalizes the report and writes it (plus sidecars) to `out`, or prints it.
    pub fn finish(self, out: Option<&Path>) -> Result<Report, CliError> {
        let outcome = if self.degenerate {
            "degenerate instance"
        } else if self.verdicts.iter().all(|v| v.passed) {
            "pass"
        } else {
            "fail"
        };
        let report = Report {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: json_hash(&self.config),
            config: self.config,
            numerics: Value::Object(self.numerics),
            verdicts: self.verdicts,
            outcome: outcome.to_string(),
            threads: rayon::current_num_threads(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            tables: self.tables.iter().map(|(n, _)| n.clone()).collect(),
        };
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Run(e.to_string()))?;
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                for (name, csv) in &self.tables {
                    std::fs::write(dir.join(name), csv)?;
                }
                let path: PathBuf = dir.join("report.json");
                std::fs::write(&path, text + "\n")?;
                eprintln!("{}: {} ({})", report.command, report.outcome, path.display());
            }
            None => println!("{text}"),
        }
        Ok(report)
    }
}

/// CSV with a header row; `None` cells are left empty.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<Option<f64>>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|c| c.map(|v| format!("{v:e}")).unwrap_or_default()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
