use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GoasError, Result};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// `gen`, `disc`, `lab` or `pad`.
    pub phase: String,
    #[serde(rename = "J_vis")]
    pub j_vis: f64,
    #[serde(rename = "J_disc")]
    pub j_disc: f64,
    #[serde(rename = "S_c")]
    pub s_c: f64,
    #[serde(rename = "S_m")]
    pub s_m: f64,
    /// Value of the objective minimised in this step.
    #[serde(rename = "J")]
    pub j: f64,
}

impl MetricsRecord {
    pub fn all_finite(&self) -> bool {
        [self.j_vis, self.j_disc, self.s_c, self.s_m, self.j].iter().all(|v| v.is_finite())
    }
}

/// In-memory metrics with an optional JSONL sink that is appended line by line.
#[derive(Debug, Default)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        MetricsLog::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn to_file(path: &Path) -> Result<Self> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GoasError::io(&*path, e))?;
        Ok(MetricsLog {
            records: Vec::new(),
            sink: Some((path.to_path_buf(), BufWriter::new(file))),
        })
    }

    pub fn push(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some((path, w)) = self.sink.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n").map_err(|e| GoasError::io(&*path, e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = self.sink.as_mut() {
            w.flush().map_err(|e| GoasError::io(&*path, e))?;
        }
        Ok(())
    }
}

impl Drop for MetricsLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| GoasError::io(&*path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GoasError::io(&*path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GoasError::Schema {
            line: i + 1,
            record: None,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
