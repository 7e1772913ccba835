//! Side-by-side AUC/HTER/EER of several evaluated runs.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use goas_core::evaluation::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::Refused;

pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub auc: f64,
    pub hter: f64,
    pub eer: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ReportRow>,
}

fn report_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join(REPORT_FILE)
    } else {
        run.to_path_buf()
    }
}

impl ComparisonTable {
    pub fn from_runs(runs: &[PathBuf]) -> Result<Self> {
        let mut rows = Vec::new();
        for run in runs {
            let path = report_path(run);
            if !path.is_file() {
                return Err(Refused(format!("run `{}` has no metrics report ({})", run.display(), path.display())).into());
            }
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let report: MetricsReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            rows.push(ReportRow {
                run: run.display().to_string(),
                auc: report.auc,
                hter: report.hter,
                eer: report.eer,
            });
        }
        Ok(ComparisonTable { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
        let mut s = format!("{:<width$}  {:>7}  {:>7}  {:>7}\n", "run", "AUC", "HTER", "EER");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}", r.run, r.auc, r.hter, r.eer);
        }
        s
    }
}
