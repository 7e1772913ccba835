use super::checkpoint::{Checkpoint, CheckpointKind};
use super::objective::{synthesize, GanParts};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::dataset::{onehot, DatasetManifest, FrameStore, PatchBatch, Split};
use crate::error::{GoasError, Result};
use crate::tensor::Tensor;

/// Every `(sensor, spoof medium)` pair.
pub fn all_spoof_combos(n_c: usize, n_m: usize) -> Vec<(usize, usize)> {
    (0..n_c).flat_map(|c| (1..n_m).map(move |m| (c, m))).collect()
}

/// For each target combination, synthesizes `count` spoof patches from the
/// live patches (reused cyclically) and labels them with the target ids.
pub fn synthesize_augmentation_pool(
    checkpoint: &Checkpoint,
    live_patches: &PatchBatch,
    target_combos: &[(usize, usize)],
    count: usize,
) -> Result<PatchBatch> {
    if checkpoint.kind != CheckpointKind::Gan {
        return Err(GoasError::Checkpoint("augmentation needs a GAN checkpoint".into()));
    }
    let nets = &checkpoint.nets;
    let (n_c, n_m) = (nets.n_c, nets.n_m);
    for &(c, m) in target_combos {
        if m == 0 {
            return Err(GoasError::invalid(format!("target ({c}, 0) is live; synthesis targets spoof mediums only")));
        }
        if c >= n_c || m >= n_m {
            return Err(GoasError::invalid(format!("target ({c}, {m}) outside {n_c} sensors x {n_m} mediums")));
        }
    }
    let size = nets.gan_patch;
    let empty = || PatchBatch::labelled(Tensor::zeros([0, 3, size, size]), &[], &[], n_c, n_m, Vec::new());
    if target_combos.is_empty() || count == 0 {
        return empty();
    }
    if live_patches.is_empty() {
        return Err(GoasError::invalid("no live patches to synthesize from"));
    }
    if live_patches.patch_size() != size {
        return Err(GoasError::shape(format!(
            "live patches are {}px, the generator was trained on {size}px",
            live_patches.patch_size()
        )));
    }
    let parts = GanParts {
        gen: &nets.gen,
        bank: checkpoint.bank.as_ref(),
        disc: &nets.disc,
        lab: &nets.lab,
        mode: nets.mode,
    };
    let chunk = checkpoint.config.batch_size.max(1);
    let mut out = Vec::new();
    let mut next = 0usize;
    for &(c, m) in target_combos {
        let mut done = 0;
        while done < count {
            let n = chunk.min(count - done);
            let idx: Vec<usize> = (0..n).map(|i| (next + i) % live_patches.len()).collect();
            next += n;
            let src = live_patches.gather(&idx);
            let a_c = Tensor::matrix(n, n_c, (0..n).flat_map(|_| onehot(c, n_c)).collect())?;
            let a_m = Tensor::matrix(n, n_m, (0..n).flat_map(|_| onehot(m, n_m)).collect())?;
            let images = synthesize(&parts, &src.images, &a_c, &a_m)?;
            out.push(PatchBatch::labelled(
                images,
                &vec![c; n],
                &vec![m; n],
                n_c,
                n_m,
                src.source_video_ids,
            )?);
            done += n;
        }
    }
    PatchBatch::concat(&out.iter().collect::<Vec<_>>())
}

/// Pool size per combination holding about four epochs' worth of synthetic
/// patches at the configured ratio.
pub fn default_pool_per_combo(config: &TrainConfig, combos: usize) -> usize {
    let per_epoch = config.patches_per_epoch as f64 * config.augment_ratio;
    ((4.0 * per_epoch) / combos.max(1) as f64).ceil().max(1.0) as usize
}

/// Samples `per_combo` live patches from the train split of `manifest` and
/// translates them to every target combination.
pub fn augmentation_pool(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    target_combos: &[(usize, usize)],
    per_combo: usize,
    seed: u64,
) -> Result<PatchBatch> {
    let store = FrameStore::load(manifest, |r| r.split == Split::Train && r.is_live())?;
    if store.is_empty() {
        return Err(GoasError::EmptySplit("no live training videos to synthesize from".into()));
    }
    let pool: Vec<usize> = (0..store.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let live = store.sample_batch(&pool, per_combo.max(1), checkpoint.nets.gan_patch, &mut rng)?;
    synthesize_augmentation_pool(checkpoint, &live, target_combos, per_combo)
}
