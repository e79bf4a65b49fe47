use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub lpips: f64,
    pub inception_score: f64,
    pub pairs: usize,
    pub translations: usize,
}

/// Per-class metrics with their averages and the protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub model_id: String,
    pub target_class: String,
    pub k_style: usize,
    pub seed: u64,
    pub rows: Vec<ClassMetrics>,
    pub average_lpips: f64,
    pub average_inception_score: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl MetricReport {
    /// Builds a report, computing the averages from `rows`.
    pub fn new(
        rows: Vec<ClassMetrics>,
        k_style: usize,
        seed: u64,
        target_class: &str,
        model_id: &str,
        version: u32,
    ) -> Self {
        Self {
            version,
            model_id: model_id.to_string(),
            target_class: target_class.to_string(),
            k_style,
            seed,
            average_lpips: mean(rows.iter().map(|r| r.lpips)),
            average_inception_score: mean(rows.iter().map(|r| r.inception_score)),
            rows,
        }
    }
}

/// Aligned plain-text table with one row per class and an Average row.
pub fn render_table(r: &MetricReport) -> String {
    let width = r
        .rows
        .iter()
        .map(|row| row.class.len())
        .chain(["Average".len(), "Class".len()])
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# model {:?}, target {:?}, k = {}, seed = {}",
        r.model_id, r.target_class, r.k_style, r.seed
    );
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "Class", "LPIPS", "IS");
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.3}  {:>8.3}",
            row.class, row.lpips, row.inception_score
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>8.3}  {:>8.3}",
        "Average", r.average_lpips, r.average_inception_score
    );
    out
}

/// Path of the text table written next to a JSON report.
pub fn table_path(path: &Path) -> PathBuf {
    path.with_extension("txt")
}

/// Writes the report as JSON to `path` and as a text table next to it.
pub fn write_report(r: &MetricReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut json = serde_json::to_string_pretty(r).map_err(|e| Error::Serde(e.to_string()))?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let table = table_path(path);
    std::fs::write(&table, render_table(r)).map_err(|e| Error::io(&table, e))
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: MetricReport = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    if report.version != REPORT_VERSION {
        return Err(Error::Serde(format!("unsupported report version {}", report.version)));
    }
    Ok(report)
}
