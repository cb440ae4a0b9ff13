//! Run reports and their CSV / JSON emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::buffer_manager::MetricsSnapshot;
use crate::error::{Error, Result};
use crate::operator::PassStats;

/// Counters and timings of one run. Only the `*_time` fields vary between
/// runs with identical inputs and seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub element_requests: u64,
    pub page_requests: u64,
    pub set_requests: u64,
    pub page_misses: u64,
    pub write_backs: u64,
    pub batch_count: u64,
    pub vectors: u64,
    pub upages: u64,
    pub reorder_time: f64,
    pub io_time: f64,
    pub compute_time: f64,
    pub total_time: f64,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(counters: MetricsSnapshot, pass: &PassStats, total: Duration, config: &impl Serialize) -> Self {
        let total_time = total.as_secs_f64();
        let reorder_time = pass.reorder_time.as_secs_f64();
        let io_time = counters.io_time.as_secs_f64();
        MetricsReport {
            element_requests: counters.element_requests,
            page_requests: counters.page_requests,
            set_requests: counters.set_requests,
            page_misses: counters.page_misses,
            write_backs: counters.write_backs,
            batch_count: pass.batches,
            vectors: pass.vectors,
            upages: pass.upages,
            reorder_time,
            io_time,
            compute_time: (total_time - reorder_time - io_time).max(0.0),
            total_time,
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        }
    }

    /// Adds the counters and timings of `other`; the config is kept.
    pub fn accumulate(&mut self, other: &MetricsReport) {
        self.element_requests += other.element_requests;
        self.page_requests += other.page_requests;
        self.set_requests += other.set_requests;
        self.page_misses += other.page_misses;
        self.write_backs += other.write_backs;
        self.batch_count += other.batch_count;
        self.vectors += other.vectors;
        self.upages += other.upages;
        self.reorder_time += other.reorder_time;
        self.io_time += other.io_time;
        self.compute_time += other.compute_time;
        self.total_time += other.total_time;
    }

    /// Copy with every timing field zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        MetricsReport { reorder_time: 0.0, io_time: 0.0, compute_time: 0.0, total_time: 0.0, ..self.clone() }
    }

    /// `metric,value` rows; config fields appear as `config.<key>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let serde_json::Value::Object(fields) = serde_json::to_value(self).expect("report serializes") else {
            unreachable!("report is a struct");
        };
        for (key, value) in fields {
            match value {
                serde_json::Value::Object(config) => {
                    for (k, v) in config {
                        writeln!(out, "{key}.{k},{}", csv_field(&scalar(&v))).unwrap();
                    }
                }
                other => writeln!(out, "{key},{}", csv_field(&scalar(&other))).unwrap(),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn emit(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        let text = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json() + "\n",
        };
        fs::write(path, text)?;
        Ok(())
    }
}

fn scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.csv` means CSV, anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!("unknown report format '{other}'"))),
        }
    }
}
