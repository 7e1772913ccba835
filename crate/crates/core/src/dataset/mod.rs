//! Labeled video records, the line-oriented manifest format, procedural data
//! generation and patch sampling.
//!
//! A manifest is a JSON-lines file. The first line is a header object with the
//! sensor and medium counts:
//!
//! ```text
//! {"n_c":3,"n_m":3}
//! {"id":"s0_m1_v000","path":"videos/s0_m1_v000","sensor_id":0,"medium_id":1,"object_id":4,"background_id":0,"split":"train"}
//! ...
//! ```
//!
//! Medium index 0 is the blank medium: a record with `medium_id == 0` is live.
//! Relative record paths resolve against the manifest's directory.

mod patches;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{GoasError, Result};

pub use patches::{
    count_frames, crop_origins, frame_path, onehot, sample_patches, Frame, FrameStore, PatchBatch,
    PatchRef,
};
pub use split::{split_by_rule, SplitOutcome};
pub use synth::{
    base_texture, generate_synthetic_dataset, Coverage, Plane, SynthLayout, SyntheticNoiseSpec,
    DEFAULT_AMPLITUDE,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = GoasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(GoasError::invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    /// Directory holding `frame_%05d.png` files.
    pub path: PathBuf,
    pub sensor_id: usize,
    pub medium_id: usize,
    pub object_id: u32,
    pub background_id: u32,
    pub split: Split,
}

impl VideoRecord {
    pub fn is_live(&self) -> bool {
        self.medium_id == 0
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    n_c: usize,
    n_m: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<VideoRecord>,
    pub n_c: usize,
    pub n_m: usize,
    pub metadata: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new(n_c: usize, n_m: usize) -> Self {
        DatasetManifest {
            records: Vec::new(),
            n_c,
            n_m,
            metadata: BTreeMap::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn subset(&self, keep: impl Fn(&VideoRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            n_c: self.n_c,
            n_m: self.n_m,
            metadata: self.metadata.clone(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn check_record(&self, line: usize, r: &VideoRecord) -> Result<()> {
        let schema = |message: String| GoasError::Schema {
            line,
            record: Some(r.id.clone()),
            message,
        };
        if r.sensor_id >= self.n_c {
            return Err(schema(format!("sensor_id {} out of range [0, {})", r.sensor_id, self.n_c)));
        }
        if r.medium_id >= self.n_m {
            return Err(schema(format!("medium_id {} out of range [0, {})", r.medium_id, self.n_m)));
        }
        if r.id.is_empty() {
            return Err(schema("empty record id".into()));
        }
        Ok(())
    }

    /// Writes the manifest; record paths under the manifest directory are
    /// stored relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let file = fs::File::create(path).map_err(|e| GoasError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = ManifestHeader {
            n_c: self.n_c,
            n_m: self.n_m,
            metadata: self.metadata.clone(),
        };
        let io = |e| GoasError::io(path, e);
        writeln!(out, "{}", serde_json::to_string(&header)?).map_err(io)?;
        for r in &self.records {
            let mut rec = r.clone();
            if let Ok(rel) = rec.path.strip_prefix(base) {
                rec.path = rel.to_path_buf();
            }
            writeln!(out, "{}", serde_json::to_string(&rec)?).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Reads and validates a manifest. Relative record paths are resolved against
/// the manifest directory; every referenced path must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(GoasError::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = fs::File::open(path).map_err(|e| GoasError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header_line = loop {
        match lines.next() {
            Some((_, Ok(l))) if l.trim().is_empty() => continue,
            Some((_, Ok(l))) => break l,
            Some((_, Err(e))) => return Err(GoasError::io(path, e)),
            None => {
                return Err(GoasError::Schema {
                    line: 1,
                    record: None,
                    message: "missing header line".into(),
                })
            }
        }
    };
    let header: ManifestHeader = serde_json::from_str(&header_line).map_err(|e| GoasError::Schema {
        line: 1,
        record: None,
        message: format!("bad header: {e}"),
    })?;
    if header.n_c == 0 || header.n_m == 0 {
        return Err(GoasError::Schema {
            line: 1,
            record: None,
            message: "n_c and n_m must be positive".into(),
        });
    }
    let mut manifest = DatasetManifest {
        records: Vec::new(),
        n_c: header.n_c,
        n_m: header.n_m,
        metadata: header.metadata,
    };
    for (idx, line) in lines {
        let line = line.map_err(|e| GoasError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| GoasError::Schema {
            line: lineno,
            record: None,
            message: e.to_string(),
        })?;
        let id = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
        let mut record: VideoRecord = serde_json::from_value(value).map_err(|e| GoasError::Schema {
            line: lineno,
            record: id.clone(),
            message: e.to_string(),
        })?;
        manifest.check_record(lineno, &record)?;
        if record.path.is_relative() {
            record.path = base.join(&record.path);
        }
        if !record.path.exists() {
            return Err(GoasError::Schema {
                line: lineno,
                record: id,
                message: format!("path {} does not exist", record.path.display()),
            });
        }
        manifest.records.push(record);
    }
    if manifest.records.is_empty() {
        warn!("manifest {} contains no records", path.display());
    }
    Ok(manifest)
}
