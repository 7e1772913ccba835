use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::{RngState, TrainConfig};
use super::gan::{TrainOutcome, CHECKPOINT_FILE, METRICS_FILE};
use super::metrics::{MetricsLog, MetricsRecord};
use crate::dataset::{DatasetManifest, FrameStore, PatchBatch, PatchRef, Split};
use crate::error::{GoasError, Result};
use crate::losses::{lab_train_loss, pad_loss, GroundTruthPadMap, LiveLossTracker};
use crate::networks::{GeneratorMode, Module, NetworkSet};
use crate::nn::{Adam, AdamConfig};

/// Real and synthetic patch counts of one classifier epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochPlan {
    pub real: usize,
    pub synthetic: usize,
}

impl EpochPlan {
    pub fn new(real: usize, ratio: f64) -> Self {
        EpochPlan {
            real,
            synthetic: (real as f64 * ratio).round() as usize,
        }
    }

    pub fn total(&self) -> usize {
        self.real + self.synthetic
    }
}

#[derive(Clone, Copy, Debug)]
enum Sample {
    Real(PatchRef),
    Synthetic(usize),
}

fn adam(lr: f64, config: &TrainConfig, shapes: &[usize]) -> Adam<f32> {
    Adam::new(
        AdamConfig {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            ..AdamConfig::default()
        },
        shapes,
    )
}

fn open_log(out_dir: Option<&Path>) -> Result<MetricsLog> {
    match out_dir {
        Some(d) => MetricsLog::to_file(&d.join(METRICS_FILE)),
        None => Ok(MetricsLog::in_memory()),
    }
}

fn finish(checkpoint: Checkpoint, mut log: MetricsLog, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    log.flush()?;
    if let Some(d) = out_dir {
        checkpoint.save(&d.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics: std::mem::take(&mut log.records),
    })
}

/// Supervised classifier training on the train split of `manifest`.
///
/// Each epoch draws `patches_per_epoch` real patches plus, when
/// `augmentation` is given, `augment_ratio` times as many patches picked at
/// random from the synthetic pool, shuffled together.
pub fn train_golab_standalone(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    augmentation: Option<&PatchBatch>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let store = FrameStore::load(manifest, |r| r.split == Split::Train)?;
    if store.is_empty() {
        return Err(GoasError::EmptySplit("no training videos".into()));
    }
    let size = config.patch_size_gan;
    if store.min_frame_side() < size {
        return Err(GoasError::invalid(format!("frames smaller than the {size} pixel patch size")));
    }
    let pool: Vec<usize> = (0..store.len()).collect();
    let synthetic = match augmentation {
        Some(p) if !p.is_empty() && config.augment_ratio > 0.0 => {
            if p.patch_size() != size {
                return Err(GoasError::shape(format!(
                    "synthetic patches are {}px, training uses {size}px",
                    p.patch_size()
                )));
            }
            Some(p)
        }
        _ => None,
    };
    let plan = EpochPlan::new(
        config.patches_per_epoch,
        if synthetic.is_some() { config.augment_ratio } else { 0.0 },
    );

    let mut nets = NetworkSet::<f32>::new(
        &config.arch,
        manifest.n_c,
        manifest.n_m,
        size,
        config.patch_size_pad,
        GeneratorMode::Prototypes,
        config.seed,
    )?;
    let mut opt = adam(config.lr_lab, config, &nets.lab.param_shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let mut log = open_log(out_dir)?;
    let mut step = 0u64;
    let mut epoch = 0usize;

    while (step as usize) < config.golab_steps {
        let mut order = Vec::with_capacity(plan.total());
        for _ in 0..plan.real {
            order.push(Sample::Real(store.random_ref(&pool, size, &mut rng)?));
        }
        if let Some(p) = synthetic {
            let mut picks: Vec<usize> = (0..p.len()).collect();
            if plan.synthetic <= p.len() {
                picks.shuffle(&mut rng);
                picks.truncate(plan.synthetic);
            } else {
                picks = (0..plan.synthetic).map(|_| rng.random_range(0..p.len())).collect();
            }
            order.extend(picks.into_iter().map(Sample::Synthetic));
        }
        order.shuffle(&mut rng);

        for chunk in order.chunks(config.batch_size) {
            if (step as usize) >= config.golab_steps {
                break;
            }
            let refs: Vec<PatchRef> = chunk
                .iter()
                .filter_map(|s| match s {
                    Sample::Real(r) => Some(*r),
                    Sample::Synthetic(_) => None,
                })
                .collect();
            let syn: Vec<usize> = chunk
                .iter()
                .filter_map(|s| match s {
                    Sample::Synthetic(i) => Some(*i),
                    Sample::Real(_) => None,
                })
                .collect();
            let real = store.materialize(&refs, size)?;
            let batch = match synthetic {
                Some(p) if !syn.is_empty() => PatchBatch::concat(&[&real, &p.gather(&syn)])?,
                _ => real,
            };

            let trace = nets.lab.forward_trace(&batch.images)?;
            let loss = lab_train_loss(&trace.output, &batch.sensor_onehot, &batch.medium_onehot)?;
            if !loss.value.is_finite() {
                return Err(GoasError::Diverged {
                    step,
                    message: format!("classifier loss {}", loss.value),
                });
            }
            let mut grads = nets.lab.zero_grads();
            nets.lab
                .backward(&trace, &loss.d_probs_c, &loss.d_probs_m, Some(&mut grads.0), false);
            if let Some(c) = config.clip_grad_norm {
                super::gan::clip_global_norm(&mut [&mut grads], c);
            }
            opt.step(nets.lab.params_mut(), &grads);
            step += 1;
            log.push(MetricsRecord {
                step,
                phase: "lab".into(),
                j_vis: 0.0,
                j_disc: 0.0,
                s_c: loss.s_c as f64,
                s_m: loss.s_m as f64,
                j: loss.value as f64,
            })?;
            if step.is_multiple_of(100) {
                info!("classifier step {step}: S_c={:.4} S_m={:.4}", loss.s_c, loss.s_m);
            }
        }
        epoch += 1;
    }
    info!("classifier trained for {step} steps over {epoch} epochs");

    let checkpoint = Checkpoint {
        kind: CheckpointKind::Golab,
        config: config.clone(),
        nets,
        bank: None,
        optimizers: BTreeMap::from([("lab".to_string(), opt)]),
        step,
        round: epoch as u64,
        rng: RngState::capture(&rng),
        live_loss: LiveLossTracker::default(),
    };
    finish(checkpoint, log, out_dir)
}

/// Supervised binary-map training: each batch holds equal numbers of live
/// (target map 0) and spoof (target map 1) patches.
pub fn train_gopad(manifest: &DatasetManifest, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let store = FrameStore::load(manifest, |r| r.split == Split::Train)?;
    let live = store.indices(|r| r.is_live());
    let spoof = store.indices(|r| !r.is_live());
    if live.is_empty() || spoof.is_empty() {
        return Err(GoasError::EmptySplit("binary map training needs live and spoof videos".into()));
    }
    let size = config.patch_size_pad;
    if store.min_frame_side() < size {
        return Err(GoasError::invalid(format!(
            "frames ({}px) smaller than the {size} pixel binary-map patch",
            store.min_frame_side()
        )));
    }
    let mut nets = NetworkSet::<f32>::new(
        &config.arch,
        manifest.n_c,
        manifest.n_m,
        config.patch_size_gan,
        size,
        GeneratorMode::Prototypes,
        config.seed,
    )?;
    let mut opt = adam(config.lr_pad, config, &nets.pad.param_shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(4));
    let mut log = open_log(out_dir)?;
    let half = config.batch_size.div_ceil(2);
    let labels: Vec<bool> = (0..2 * half).map(|i| i >= half).collect();
    let map = nets.pad.map_size;
    let target = GroundTruthPadMap::from_labels(&labels, map, map);

    for step in 1..=config.gopad_steps as u64 {
        let l = store.sample_batch(&live, half, size, &mut rng)?;
        let s = store.sample_batch(&spoof, half, size, &mut rng)?;
        let batch = PatchBatch::concat(&[&l, &s])?;
        let trace = nets.pad.forward_trace(&batch.images)?;
        let out = crate::networks::PadMap {
            map: trace.output().clone(),
        };
        let loss = pad_loss(&out, &target)?;
        if !loss.value.is_finite() {
            return Err(GoasError::Diverged {
                step,
                message: format!("binary map loss {}", loss.value),
            });
        }
        let mut grads = nets.pad.zero_grads();
        nets.pad.backward(&trace, &loss.grad, Some(&mut grads.0), false);
        if let Some(c) = config.clip_grad_norm {
            super::gan::clip_global_norm(&mut [&mut grads], c);
        }
        opt.step(nets.pad.params_mut(), &grads);
        log.push(MetricsRecord {
            step,
            phase: "pad".into(),
            j_vis: 0.0,
            j_disc: 0.0,
            s_c: 0.0,
            s_m: 0.0,
            j: loss.value as f64,
        })?;
        if step % 100 == 0 {
            info!("binary map step {step}: J={:.4}", loss.value);
        }
    }

    let checkpoint = Checkpoint {
        kind: CheckpointKind::Gopad,
        config: config.clone(),
        nets,
        bank: None,
        optimizers: BTreeMap::from([("pad".to_string(), opt)]),
        step: config.gopad_steps as u64,
        round: 0,
        rng: RngState::capture(&rng),
        live_loss: LiveLossTracker::default(),
    };
    finish(checkpoint, log, out_dir)
}
