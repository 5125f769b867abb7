//! Result records and their output formats.
//!
//! A [`ResultRecord`] holds one row per `(strategy, prompt, rep)` run plus
//! per-strategy aggregates. It serializes to JSON losslessly; the csv form
//! has the fixed column set
//! `experiment_id,strategy,prompt_idx,rep,committed,forward_passes,acceptance_length,throughput,wall_time_s`
//! and the plotdata form emits `(chart, x, y, label)` lines for
//! throughput-vs-config and acceptance-vs-config charts.

use serde::{Deserialize, Serialize};
use specdraft_core::{Error, Result, RunMetrics};
use std::str::FromStr;

/// One generation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub strategy_idx: usize,
    pub strategy: String,
    pub prompt_idx: usize,
    pub rep: usize,
    /// The derived per-run seed actually used.
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Per-strategy aggregate over all of its runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy_idx: usize,
    pub strategy: String,
    pub runs: usize,
    pub throughput_mean: f64,
    pub throughput_std: f64,
    pub acceptance_length_mean: f64,
    pub acceptance_length_std: f64,
    /// Bandit strategies: total selections per arm across all runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_counts: Option<Vec<u64>>,
    /// Set when this strategy failed to run; it then contributes no rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentStamp {
    /// Package name and version of the build that produced the record.
    pub build: String,
    /// Measured monotonic-clock resolution.
    pub clock_resolution_ns: u64,
}

impl EnvironmentStamp {
    pub fn capture() -> Self {
        Self {
            build: format!("specdraft-cli {}", env!("CARGO_PKG_VERSION")),
            clock_resolution_ns: clock_resolution_ns(),
        }
    }
}

/// Smallest positive difference observed between consecutive monotonic-clock
/// reads.
fn clock_resolution_ns() -> u64 {
    use std::time::Instant;
    let mut best = u64::MAX;
    let mut prev = Instant::now();
    for _ in 0..4096 {
        let now = Instant::now();
        let d = now.duration_since(prev).as_nanos() as u64;
        if d > 0 {
            best = best.min(d);
            prev = now;
        }
    }
    if best == u64::MAX {
        0
    } else {
        best
    }
}

/// Everything one experiment produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub environment: EnvironmentStamp,
}

impl ResultRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plotdata" => Ok(ReportFormat::Plotdata),
            _ => Err(Error::InvalidConfig(format!(
                "unknown report format {s:?} (expected csv, json, or plotdata)"
            ))),
        }
    }
}

/// Render a record in the requested format.
pub fn emit_report(record: &ResultRecord, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => csv_report(record),
        ReportFormat::Json => record.to_json(),
        ReportFormat::Plotdata => Ok(plotdata_report(record)),
    }
}

/// Fixed csv column order for downstream tooling.
pub const CSV_HEADER: &str = "experiment_id,strategy,prompt_idx,rep,committed,forward_passes,\
                              acceptance_length,throughput,wall_time_s";

fn csv_report(record: &ResultRecord) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "experiment_id",
            "strategy",
            "prompt_idx",
            "rep",
            "committed",
            "forward_passes",
            "acceptance_length",
            "throughput",
            "wall_time_s",
        ])
        .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
    for row in &record.rows {
        writer
            .write_record([
                record.experiment_id.as_str(),
                row.strategy.as_str(),
                &row.prompt_idx.to_string(),
                &row.rep.to_string(),
                &row.metrics.committed_total.to_string(),
                &row.metrics.target_forward_passes.to_string(),
                &row.metrics.acceptance_length().to_string(),
                &row.metrics.throughput().to_string(),
                &row.metrics.wall_time_s.to_string(),
            ])
            .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv write failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv not utf-8: {e}")))
}

/// One `(x, y, label)` point per aggregate row and chart, skipping errored
/// rows.
fn plotdata_report(record: &ResultRecord) -> String {
    let mut out = String::new();
    for agg in &record.aggregates {
        if agg.error.is_some() {
            continue;
        }
        out.push_str(&format!(
            "throughput {} {} {}\n",
            agg.strategy_idx, agg.throughput_mean, agg.strategy
        ));
    }
    for agg in &record.aggregates {
        if agg.error.is_some() {
            continue;
        }
        out.push_str(&format!(
            "acceptance_length {} {} {}\n",
            agg.strategy_idx, agg.acceptance_length_mean, agg.strategy
        ));
    }
    out
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
