//! Report types, their JSON files and aligned console tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::models::Variant;

pub const METRICS_FILE: &str = "metrics_report.json";
pub const EFFICIENCY_FILE: &str = "efficiency_report.json";
pub const ABLATION_FILE: &str = "ablation_report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub seq_id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub vi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub vi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub model_id: String,
    pub timestamp: u64,
    pub per_sequence: Vec<SequenceMetrics>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    /// Builds a report whose aggregate is the arithmetic mean of the rows.
    pub fn new(task: Task, model_id: &str, timestamp: u64, rows: Vec<SequenceMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let mut agg = Aggregate::default();
        for r in &rows {
            agg.psnr += r.psnr;
            agg.ssim += r.ssim;
            agg.nrmse += r.nrmse;
            agg.vi += r.vi;
        }
        agg.psnr /= n;
        agg.ssim /= n;
        agg.nrmse /= n;
        agg.vi /= n;
        MetricsReport {
            task,
            model_id: model_id.to_string(),
            timestamp,
            per_sequence: rows,
            aggregate: agg,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(METRICS_FILE), self)
    }

    pub fn table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_sequence
            .iter()
            .map(|r| metric_cells(&r.seq_id, r.psnr, r.ssim, r.nrmse, r.vi))
            .collect();
        let a = &self.aggregate;
        rows.push(metric_cells("mean", a.psnr, a.ssim, a.nrmse, a.vi));
        render(&["sequence", "PSNR ↑", "SSIM ↑", "NRMSE ↓", "VI ↓"], &rows)
    }
}

fn metric_cells(name: &str, psnr: f64, ssim: f64, nrmse: f64, vi: f64) -> Vec<String> {
    vec![
        name.to_string(),
        format!("{psnr:.4}"),
        format!("{ssim:.4}"),
        format!("{nrmse:.4}"),
        format!("{vi:.4}"),
    ]
}

/// Model cost in the units of the efficiency table: parameters / 10⁶,
/// FLOPs per frame / 10¹⁰, seconds per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub variant: Variant,
    pub params_millions: f64,
    pub flops_e10: f64,
    pub time_s: f64,
    pub rounds: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl EfficiencyReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(EFFICIENCY_FILE), self)
    }

    pub fn table(&self) -> String {
        render(
            &["model", "Params (M) ↓", "FLOPs (1e10) ↓", "Time (s) ↓"],
            &[vec![
                self.variant.to_string(),
                format!("{:.4}", self.params_millions),
                format!("{:.4}", self.flops_e10),
                format!("{:.4}", self.time_s),
            ]],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub efficiency: EfficiencyReport,
    pub metrics: Aggregate,
    /// Best validation PSNR reached during training.
    pub best_val_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub task: Task,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(ABLATION_FILE), self)
    }

    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.efficiency.variant == variant)
    }

    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let (e, m) = (&r.efficiency, &r.metrics);
                vec![
                    e.variant.to_string(),
                    format!("{:.4}", e.params_millions),
                    format!("{:.4}", e.flops_e10),
                    format!("{:.4}", e.time_s),
                    format!("{:.4}", m.psnr),
                    format!("{:.4}", m.ssim),
                    format!("{:.4}", m.nrmse),
                    format!("{:.4}", m.vi),
                ]
            })
            .collect();
        render(
            &["variant", "Params (M)", "FLOPs (1e10)", "Time (s)", "PSNR ↑", "SSIM ↑", "NRMSE ↓", "VI ↓"],
            &rows,
        )
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Left-aligned first column, right-aligned numbers.
fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let fmt_row = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = " ".repeat(widths[i] - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = fmt_row(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_row(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
