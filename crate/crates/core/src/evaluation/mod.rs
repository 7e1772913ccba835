//! Patch scoring, video aggregation and the video-level metrics.
//!
//! Spoof is the positive class: a higher score means "more likely spoof".
//! FAR is the fraction of spoof videos accepted as live, FRR the fraction of
//! live videos rejected.

mod metrics;
pub mod plot;
pub mod reference;

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{
    compute_auc, compute_eer, compute_hter, compute_roc, hter_at, threshold_serde, ConfusionCounts, MetricsReport,
    RocPoint, VideoCounts,
};

use crate::dataset::{count_frames, crop_origins, frame_path, DatasetManifest, Frame, Split, VideoRecord};
use crate::error::{GoasError, Result};
use crate::networks::{golab_spoof_score, GoLab, GoPad};
use crate::tensor::Tensor;
use crate::training::{Checkpoint, CheckpointKind};

pub const DEFAULT_PATCHES_PER_FRAME: usize = 20;
const SCORE_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VideoLabel {
    Live,
    Spoof,
}

/// How patch scores become one video score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Fraction of patch scores above 0.5.
    #[default]
    VoteFraction,
    /// Mean patch score.
    Mean,
}

impl FromStr for Aggregation {
    type Err = GoasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vote" | "vote-fraction" => Ok(Aggregation::VoteFraction),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(GoasError::invalid(format!("unknown aggregation `{s}` (vote or mean)"))),
        }
    }
}

pub fn aggregate(patch_scores: &[f64], mode: Aggregation) -> f64 {
    if patch_scores.is_empty() {
        return 0.0;
    }
    let n = patch_scores.len() as f64;
    match mode {
        Aggregation::VoteFraction => patch_scores.iter().filter(|&&s| s > 0.5).count() as f64 / n,
        Aggregation::Mean => patch_scores.iter().sum::<f64>() / n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub patch_scores: Vec<f64>,
    pub video_score: f64,
    pub label: VideoLabel,
    pub sensor_id: usize,
    pub medium_id: usize,
    pub object_id: u32,
    pub background_id: u32,
}

impl VideoScore {
    pub fn from_patches(record: &VideoRecord, patch_scores: Vec<f64>, mode: Aggregation) -> Self {
        VideoScore {
            video_id: record.id.clone(),
            video_score: aggregate(&patch_scores, mode),
            patch_scores,
            label: if record.is_live() { VideoLabel::Live } else { VideoLabel::Spoof },
            sensor_id: record.sensor_id,
            medium_id: record.medium_id,
            object_id: record.object_id,
            background_id: record.background_id,
        }
    }

    /// A score with no patch detail; spoof videos get medium 1.
    pub fn bare(video_id: String, video_score: f64, label: VideoLabel) -> Self {
        VideoScore {
            video_id,
            patch_scores: Vec::new(),
            video_score,
            label,
            sensor_id: 0,
            medium_id: usize::from(label == VideoLabel::Spoof),
            object_id: 0,
            background_id: 0,
        }
    }

    pub fn is_spoof(&self) -> bool {
        self.label == VideoLabel::Spoof
    }
}

/// The network that turns a patch into a spoof score.
#[derive(Clone, Copy, Debug)]
pub enum PatchModel<'a> {
    /// `1 − P(live medium)`.
    Classifier(&'a GoLab<f32>),
    /// Mean of the binary map.
    BinaryMap(&'a GoPad<f32>),
}

impl<'a> PatchModel<'a> {
    pub fn from_checkpoint(ck: &'a Checkpoint) -> Self {
        match ck.kind {
            CheckpointKind::Gopad => PatchModel::BinaryMap(&ck.nets.pad),
            CheckpointKind::Gan | CheckpointKind::Golab => PatchModel::Classifier(&ck.nets.lab),
        }
    }

    pub fn patch_size(ck: &Checkpoint) -> usize {
        match ck.kind {
            CheckpointKind::Gopad => ck.nets.pad_patch,
            _ => ck.nets.gan_patch,
        }
    }

    pub fn score(&self, images: &Tensor<f32>) -> Result<Vec<f64>> {
        Ok(match self {
            PatchModel::Classifier(lab) => golab_spoof_score(&lab.forward(images)?)
                .into_iter()
                .map(f64::from)
                .collect(),
            PatchModel::BinaryMap(pad) => pad.forward(images)?.spoof_scores().into_iter().map(f64::from).collect(),
        })
    }
}

fn video_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a keeps patch selection independent of video order.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Every frame of `record` with `patches_per_frame` random crop corners each.
pub fn video_patches(record: &VideoRecord, patches_per_frame: usize, size: usize, seed: u64) -> Result<Tensor<f32>> {
    let n = count_frames(&record.path);
    if n == 0 {
        return Err(GoasError::invalid(format!("video `{}` has no frames", record.id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(seed, &record.id));
    let mut images = Tensor::zeros([n * patches_per_frame, 3, size, size]);
    for f in 0..n {
        let frame = Frame::load(&frame_path(&record.path, f))?;
        let origins = crop_origins(frame.width, frame.height, size, patches_per_frame, &mut rng)?;
        for (k, (x, y)) in origins.into_iter().enumerate() {
            frame.write_patch(x, y, size, images.sample_mut(f * patches_per_frame + k));
        }
    }
    Ok(images)
}

fn chunked<T>(images: &Tensor<f32>, mut f: impl FnMut(&Tensor<f32>) -> Result<Vec<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(images.batch());
    let idx: Vec<usize> = (0..images.batch()).collect();
    for c in idx.chunks(SCORE_CHUNK) {
        out.extend(f(&images.gather(c))?);
    }
    Ok(out)
}

/// Scores `patches_per_frame` random patches of every frame.
pub fn score_video_with(
    model: PatchModel<'_>,
    patch_size: usize,
    record: &VideoRecord,
    patches_per_frame: usize,
    seed: u64,
    mode: Aggregation,
) -> Result<VideoScore> {
    if patches_per_frame == 0 {
        return Err(GoasError::invalid("patches_per_frame must be positive"));
    }
    let images = video_patches(record, patches_per_frame, patch_size, seed)?;
    let scores = chunked(&images, |b| model.score(b))?;
    Ok(VideoScore::from_patches(record, scores, mode))
}

/// Vote-fraction video score from the checkpoint's scoring network.
pub fn score_video(checkpoint: &Checkpoint, record: &VideoRecord, patches_per_frame: usize, seed: u64) -> Result<VideoScore> {
    score_video_with(
        PatchModel::from_checkpoint(checkpoint),
        PatchModel::patch_size(checkpoint),
        record,
        patches_per_frame,
        seed,
        Aggregation::VoteFraction,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub patches_per_frame: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
    /// Videos are scored on this many threads; results do not depend on it.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            patches_per_frame: DEFAULT_PATCHES_PER_FRAME,
            seed: 0,
            aggregation: Aggregation::VoteFraction,
            workers: 1,
        }
    }
}

fn parallel_map<T: Send>(
    records: &[&VideoRecord],
    workers: usize,
    f: impl Fn(&VideoRecord) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let workers = workers.clamp(1, records.len().max(1));
    if workers == 1 {
        return records.iter().map(|r| f(r)).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..records.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || {
                    (w..records.len())
                        .step_by(workers)
                        .map(|i| (i, f(records[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("scoring worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Scores every video of `split`, in manifest order.
pub fn score_split(checkpoint: &Checkpoint, manifest: &DatasetManifest, split: Split, opts: &EvalOptions) -> Result<Vec<VideoScore>> {
    let records: Vec<&VideoRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(GoasError::EmptySplit(format!("{split} split has no videos")));
    }
    let model = PatchModel::from_checkpoint(checkpoint);
    let size = PatchModel::patch_size(checkpoint);
    parallel_map(&records, opts.workers, |r| {
        score_video_with(model, size, r, opts.patches_per_frame, opts.seed, opts.aggregation)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Object,
    Background,
    Sensor,
    Medium,
}

impl FromStr for GroupBy {
    type Err = GoasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "object" => Ok(GroupBy::Object),
            "background" => Ok(GroupBy::Background),
            "sensor" => Ok(GroupBy::Sensor),
            "medium" => Ok(GroupBy::Medium),
            _ => Err(GoasError::invalid(format!("unknown grouping `{s}`"))),
        }
    }
}

impl GroupBy {
    pub fn key(self, s: &VideoScore) -> usize {
        match self {
            GroupBy::Object => s.object_id as usize,
            GroupBy::Background => s.background_id as usize,
            GroupBy::Sensor => s.sensor_id,
            GroupBy::Medium => s.medium_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group_by: GroupBy,
    pub value: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupedRoc {
    pub reports: Vec<GroupReport>,
    /// Groups without both classes, e.g. `medium=3`.
    pub skipped: Vec<String>,
}

/// The videos forming each group. Medium groups pair one medium's spoof
/// videos with every live video; other groupings partition the videos.
pub fn group_members(scores: &[VideoScore], group_by: GroupBy) -> BTreeMap<usize, Vec<VideoScore>> {
    let mut groups: BTreeMap<usize, Vec<VideoScore>> = BTreeMap::new();
    match group_by {
        GroupBy::Medium => {
            let lives: Vec<VideoScore> = scores.iter().filter(|s| !s.is_spoof()).cloned().collect();
            for s in scores.iter().filter(|s| s.is_spoof()) {
                groups
                    .entry(s.medium_id)
                    .or_insert_with(|| lives.clone())
                    .push(s.clone());
            }
        }
        _ => {
            for s in scores {
                groups.entry(group_by.key(s)).or_default().push(s.clone());
            }
        }
    }
    groups
}

pub fn grouped_roc(scores: &[VideoScore], group_by: GroupBy, n_m: Option<usize>) -> Result<GroupedRoc> {
    let groups = group_members(scores, group_by);
    let mut out = GroupedRoc::default();
    if let (GroupBy::Medium, Some(n_m)) = (group_by, n_m) {
        for m in 1..n_m {
            if !groups.contains_key(&m) {
                warn!("medium {m} has no spoof videos; skipped");
                out.skipped.push(format!("medium={m}"));
            }
        }
    }
    for (value, members) in groups {
        let has_live = members.iter().any(|s| !s.is_spoof());
        let has_spoof = members.iter().any(|s| s.is_spoof());
        if !(has_live && has_spoof) {
            warn!("{group_by:?} group {value} lacks one class; skipped");
            out.skipped.push(format!("{}={value}", serde_json::to_value(group_by)?.as_str().unwrap_or("group")));
            continue;
        }
        out.reports.push(GroupReport {
            group_by,
            value,
            report: MetricsReport::build(&members, None)?,
        });
    }
    Ok(out)
}

/// Plurality vote; ties go to the smallest class index.
pub fn plurality(votes: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &v in votes {
        counts[v] += 1;
    }
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// Row-normalised confusion matrix (rows = truth) and percent accuracy.
/// Rows of absent classes stay zero.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> (Vec<Vec<f64>>, f64) {
    let mut m = vec![vec![0.0; classes]; classes];
    let mut correct = 0;
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1.0;
        correct += usize::from(t == p);
    }
    for row in m.iter_mut() {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    (m, 100.0 * correct as f64 / truth.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub sensor: Vec<Vec<f64>>,
    pub medium: Vec<Vec<f64>>,
    pub sensor_accuracy: f64,
    pub medium_accuracy: f64,
    pub videos: usize,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Per-video plurality of per-patch classifier predictions, compared with
/// the recorded sensor and medium.
pub fn confusion_matrices(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    split: Split,
    opts: &EvalOptions,
) -> Result<ConfusionReport> {
    if checkpoint.kind == CheckpointKind::Gopad {
        return Err(GoasError::invalid("confusion matrices need a classifier checkpoint"));
    }
    let records: Vec<&VideoRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(GoasError::EmptySplit(format!("{split} split has no videos")));
    }
    let lab = &checkpoint.nets.lab;
    let size = checkpoint.nets.gan_patch;
    let (n_c, n_m) = (checkpoint.nets.n_c, checkpoint.nets.n_m);
    let preds = parallel_map(&records, opts.workers, |r| {
        let images = video_patches(r, opts.patches_per_frame, size, opts.seed)?;
        let votes = chunked(&images, |b| {
            let out = lab.forward(b)?;
            Ok((0..b.batch())
                .map(|i| (argmax(out.probs_c.row(i)), argmax(out.probs_m.row(i))))
                .collect())
        })?;
        let (vc, vm): (Vec<usize>, Vec<usize>) = votes.into_iter().unzip();
        Ok((plurality(&vc, n_c), plurality(&vm, n_m)))
    })?;
    let (pc, pm): (Vec<usize>, Vec<usize>) = preds.into_iter().unzip();
    let tc: Vec<usize> = records.iter().map(|r| r.sensor_id).collect();
    let tm: Vec<usize> = records.iter().map(|r| r.medium_id).collect();
    let (sensor, sensor_accuracy) = confusion_matrix(&tc, &pc, n_c);
    let (medium, medium_accuracy) = confusion_matrix(&tm, &pm, n_m);
    Ok(ConfusionReport {
        sensor,
        medium,
        sensor_accuracy,
        medium_accuracy,
        videos: records.len(),
    })
}

/// Video-level accuracy at the 0.5 majority-vote threshold.
pub fn majority_accuracy(scores: &[VideoScore]) -> f64 {
    let correct = scores.iter().filter(|s| (s.video_score >= 0.5) == s.is_spoof()).count();
    correct as f64 / scores.len().max(1) as f64
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| GoasError::io(path, e))
}
