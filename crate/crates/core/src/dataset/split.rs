use std::collections::BTreeSet;

use log::warn;

use super::{DatasetManifest, Split};
use crate::error::{GoasError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    /// Ids of records with one attribute inside the train sets and one outside.
    pub excluded: Vec<String>,
}

/// Assigns `train` to records whose object and background are both in the
/// train sets, `test` to records with both outside, and drops the rest.
pub fn split_by_rule(
    manifest: &DatasetManifest,
    train_objects: &BTreeSet<u32>,
    train_backgrounds: &BTreeSet<u32>,
) -> Result<SplitOutcome> {
    if train_objects.is_empty() || train_backgrounds.is_empty() {
        return Err(GoasError::invalid("train object and background sets must be non-empty"));
    }
    let mut out = DatasetManifest {
        records: Vec::with_capacity(manifest.records.len()),
        ..manifest.clone()
    };
    let mut excluded = Vec::new();
    for r in &manifest.records {
        let obj = train_objects.contains(&r.object_id);
        let bg = train_backgrounds.contains(&r.background_id);
        let split = match (obj, bg) {
            (true, true) => Split::Train,
            (false, false) => Split::Test,
            _ => {
                excluded.push(r.id.clone());
                continue;
            }
        };
        let mut rec = r.clone();
        rec.split = split;
        out.records.push(rec);
    }
    for s in [Split::Train, Split::Test] {
        if out.split(s).next().is_none() {
            return Err(GoasError::EmptySplit(format!("{s} split has no records")));
        }
    }
    if !excluded.is_empty() {
        warn!("{} records straddle the train/test rule and were excluded", excluded.len());
    }
    Ok(SplitOutcome {
        manifest: out,
        excluded,
    })
}
