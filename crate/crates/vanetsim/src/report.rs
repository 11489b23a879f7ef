//! Machine-readable run reports.
//!
//! JSON is the default rendering. The CSV rendering is a long table with
//! columns `row,field,value`: summary fields use row label `summary`, table
//! rows use their `label` field (or their index when unlabeled).

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use crate::CliError;

/// Significant digits kept for every float in a report.
pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// SHA-256 of the input bytes, lowercase hex.
    pub scenario_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub wall_time: f64,
    pub summary: Map<String, Value>,
    pub rows: Vec<Map<String, Value>>,
}

fn round_significant(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

/// Ordered set of report fields. Non-finite numbers are recorded and turned
/// into an error when the report is assembled.
#[derive(Debug, Clone, Default)]
pub struct Record {
    fields: Map<String, Value>,
    bad: Vec<String>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(mut self, key: &str, x: f64) -> Self {
        match Number::from_f64(round_significant(x)) {
            Some(n) => {
                self.fields.insert(key.to_owned(), Value::Number(n));
            }
            None => self.bad.push(format!("{key} = {x}")),
        }
        self
    }

    pub fn int(mut self, key: &str, n: u64) -> Self {
        self.fields.insert(key.to_owned(), Value::from(n));
        self
    }

    pub fn text(mut self, key: &str, s: impl Into<String>) -> Self {
        self.fields.insert(key.to_owned(), Value::String(s.into()));
        self
    }

    pub fn flag(mut self, key: &str, b: bool) -> Self {
        self.fields.insert(key.to_owned(), Value::Bool(b));
        self
    }
}

pub struct ReportBuilder {
    command: String,
    digest: String,
    seed: Option<u64>,
    summary: Record,
    rows: Vec<Record>,
}

impl ReportBuilder {
    pub fn new(command: &str, digest: String, seed: Option<u64>) -> Self {
        Self {
            command: command.to_owned(),
            digest,
            seed,
            summary: Record::new(),
            rows: Vec::new(),
        }
    }

    pub fn summary(&mut self, f: impl FnOnce(Record) -> Record) {
        let current = std::mem::take(&mut self.summary);
        self.summary = f(current);
    }

    pub fn row(&mut self, r: Record) {
        self.rows.push(r);
    }

    pub fn finish(self, wall_time: f64) -> Result<RunReport, CliError> {
        let bad: Vec<String> = self
            .summary
            .bad
            .iter()
            .chain(self.rows.iter().flat_map(|r| r.bad.iter()))
            .cloned()
            .collect();
        if !bad.is_empty() {
            return Err(CliError::Numerical(format!(
                "non-finite report fields: {}",
                bad.join(", ")
            )));
        }
        Ok(RunReport {
            command: self.command,
            scenario_digest: self.digest,
            seed: self.seed,
            wall_time: round_significant(wall_time),
            summary: self.summary.fields,
            rows: self.rows.into_iter().map(|r| r.fields).collect(),
        })
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl RunReport {
    pub fn write<W: Write>(&self, format: Format, out: W) -> Result<(), CliError> {
        match format {
            Format::Json => {
                let mut out = out;
                serde_json::to_writer_pretty(&mut out, self).map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(out).map_err(|e| CliError::Io(e.to_string()))
            }
            Format::Csv => self.write_csv(out),
        }
    }

    fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let io = |e: csv::Error| CliError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "field", "value"]).map_err(io)?;
        let meta = [
            ("command", Value::String(self.command.clone())),
            ("scenario_digest", Value::String(self.scenario_digest.clone())),
            ("wall_time", Value::from(self.wall_time)),
        ];
        for (k, v) in meta.iter().chain(self.seed.map(|s| ("seed", Value::from(s))).iter()) {
            w.write_record(["meta", k, &cell(v)]).map_err(io)?;
        }
        for (k, v) in &self.summary {
            w.write_record(["summary", k, &cell(v)]).map_err(io)?;
        }
        for (i, row) in self.rows.iter().enumerate() {
            let label = row.get("label").map(cell).unwrap_or_else(|| i.to_string());
            for (k, v) in row.iter().filter(|(k, _)| k.as_str() != "label") {
                w.write_record([label.as_str(), k, &cell(v)]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}
