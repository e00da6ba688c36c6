//! CSV outputs: training history, metrics, heatmaps and α sweeps.

use std::path::Path;

use clfa_core::metrics::MetricsReport;
use clfa_core::train::EpochRecord;
use clfa_core::Tensor;

use crate::error::{CliError, Result};

pub const METRIC_COLUMNS: [&str; 4] = ["acc", "macro_P", "macro_R", "macro_F1"];
pub const LOSS_COLUMNS: [&str; 7] = ["L_ic", "L_ci", "L_i", "L_t", "L_con", "L_ce", "total"];

fn metric_fields(m: &MetricsReport) -> [String; 4] {
    [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1].map(|v| v.to_string())
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = ["epoch"].into_iter().chain(LOSS_COLUMNS).chain(METRIC_COLUMNS).collect();
    w.write_record(&header)?;
    for r in history {
        let a = r.loss.align;
        let mut row = vec![r.epoch.to_string()];
        row.extend([a.ic, a.ci, a.i, a.t, a.con, r.loss.ce, r.loss.total].map(|v| v.to_string()));
        row.extend(metric_fields(&r.metrics));
        w.write_record(&row)?;
    }
    finish(w, path)
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRIC_COLUMNS)?;
    w.write_record(metric_fields(report))?;
    finish(w, path)
}

/// Matrix rows as CSV lines, no header.
pub fn write_heatmap(path: &Path, m: &Tensor) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..m.rows() {
        w.write_record(m.row_slice(r).iter().map(|v| v.to_string()))?;
    }
    finish(w, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// The α value as spelled on the command line.
    pub alpha: String,
    pub seed: u64,
    pub metrics: MetricsReport,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = ["alpha", "seed"].into_iter().chain(METRIC_COLUMNS).collect();
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.alpha.clone(), r.seed.to_string()];
        row.extend(metric_fields(&r.metrics));
        w.write_record(&row)?;
    }
    finish(w, path)
}
