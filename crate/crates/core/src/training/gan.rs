use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::{RngState, TrainConfig};
use super::metrics::{MetricsLog, MetricsRecord};
use super::objective::{discriminator_pass, generator_pass, DiscBatch, GanParts, GroupGrads};
use crate::dataset::{onehot, DatasetManifest, FrameStore, Split};
use crate::error::{GoasError, Result};
use crate::losses::LiveLossTracker;
use crate::networks::{GeneratorMode, Module, NetworkSet};
use crate::nn::{Adam, AdamConfig, Grads};
use crate::noise_bank::NoisePrototypeBank;
use crate::tensor::Tensor;

/// Decoded training frames with the live and spoof record pools.
#[derive(Clone, Debug)]
pub struct GanData {
    pub store: FrameStore,
    pub live: Vec<usize>,
    pub spoof: Vec<usize>,
}

impl GanData {
    pub fn from_store(store: FrameStore) -> Result<Self> {
        let live = store.indices(|r| r.is_live());
        let spoof = store.indices(|r| !r.is_live());
        if live.is_empty() {
            return Err(GoasError::EmptySplit("no live training videos".into()));
        }
        if spoof.is_empty() {
            return Err(GoasError::EmptySplit("no spoof training videos".into()));
        }
        Ok(GanData { store, live, spoof })
    }

    /// The train split of `manifest`.
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        Self::from_store(FrameStore::load(manifest, |r| r.split == Split::Train)?)
    }
}

/// Uniformly drawn `(sensor, spoof medium)` targets as one-hot matrices.
pub fn random_targets<R: Rng + ?Sized>(n: usize, n_c: usize, n_m: usize, rng: &mut R) -> (Tensor<f32>, Tensor<f32>) {
    let mut a_c = Vec::with_capacity(n * n_c);
    let mut a_m = Vec::with_capacity(n * n_m);
    for _ in 0..n {
        a_c.extend(onehot(rng.random_range(0..n_c), n_c));
        a_m.extend(onehot(rng.random_range(1..n_m), n_m));
    }
    (
        Tensor::matrix(n, n_c, a_c).expect("sized"),
        Tensor::matrix(n, n_m, a_m).expect("sized"),
    )
}

fn adam(lr: f64, config: &TrainConfig, shapes: &[usize]) -> Adam<f32> {
    adam_decayed(lr, 0.0, config, shapes)
}

fn adam_decayed(lr: f64, weight_decay: f64, config: &TrainConfig, shapes: &[usize]) -> Adam<f32> {
    Adam::new(
        AdamConfig {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            weight_decay,
            ..AdamConfig::default()
        },
        shapes,
    )
}

/// Rescales `groups` jointly so their global norm is at most `max_norm`.
pub fn clip_global_norm(groups: &mut [&mut Grads<f32>], max_norm: f64) {
    let norm = groups.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in groups.iter_mut() {
            g.scale(s);
        }
    }
}

/// State of an alternating generator/discriminator run.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    pub config: TrainConfig,
    pub nets: NetworkSet<f32>,
    pub bank: Option<NoisePrototypeBank<f32>>,
    pub opt_gen: Adam<f32>,
    pub opt_bank: Option<Adam<f32>>,
    pub opt_disc: Adam<f32>,
    pub opt_lab: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub live_loss: LiveLossTracker,
    pub step: u64,
    pub round: u64,
    /// Where a diagnostic checkpoint is written on divergence.
    pub diagnostic_dir: Option<PathBuf>,
}

impl GanTrainer {
    pub fn new(config: &TrainConfig, n_c: usize, n_m: usize, mode: GeneratorMode) -> Result<Self> {
        config.validate()?;
        let nets = NetworkSet::new(
            &config.arch,
            n_c,
            n_m,
            config.patch_size_gan,
            config.patch_size_pad,
            mode,
            config.seed,
        )?;
        let bank = match mode {
            GeneratorMode::Prototypes => Some(NoisePrototypeBank::init(
                n_c,
                n_m,
                config.patch_size_gan,
                config.bank_init_scheme()?,
                config.seed.wrapping_add(1),
            )?),
            GeneratorMode::OnehotMaps => None,
        };
        Ok(GanTrainer {
            opt_gen: adam(config.lr_gen, config, &nets.gen.param_shapes()),
            opt_bank: bank
                .as_ref()
                .map(|b| {
                    adam_decayed(
                        config.lr_bank.unwrap_or(config.lr_gen),
                        config.bank_weight_decay,
                        config,
                        &[b.sensor.len(), b.medium.len()],
                    )
                }),
            opt_disc: adam(config.lr_disc, config, &nets.disc.param_shapes()),
            opt_lab: adam(config.lr_disc, config, &nets.lab.param_shapes()),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)),
            live_loss: LiveLossTracker::default(),
            step: 0,
            round: 0,
            diagnostic_dir: None,
            config: config.clone(),
            nets,
            bank,
        })
    }

    pub fn parts(&self) -> GanParts<'_, f32> {
        GanParts {
            gen: &self.nets.gen,
            bank: self.bank.as_ref(),
            disc: &self.nets.disc,
            lab: &self.nets.lab,
            mode: self.nets.mode,
        }
    }

    fn check_data(&self, data: &GanData) -> Result<()> {
        if data.store.n_c != self.nets.n_c || data.store.n_m != self.nets.n_m {
            return Err(GoasError::invalid("dataset class counts differ from the networks"));
        }
        if data.store.min_frame_side() < self.config.patch_size_gan {
            return Err(GoasError::invalid(format!(
                "frames smaller than the {} pixel patch size",
                self.config.patch_size_gan
            )));
        }
        Ok(())
    }

    fn diverged(&self, message: String) -> GoasError {
        if let Some(dir) = &self.diagnostic_dir {
            let path = dir.join("diverged.ckpt");
            match self.checkpoint().save(&path) {
                Ok(()) => warn!("diagnostic checkpoint written to {}", path.display()),
                Err(e) => warn!("could not write diagnostic checkpoint: {e}"),
            }
        }
        GoasError::Diverged {
            step: self.step,
            message,
        }
    }

    /// One update of the generator and the prototype bank.
    pub fn gen_step(&mut self, data: &GanData) -> Result<MetricsRecord> {
        let b = self.config.batch_size;
        let live = data.store.sample_batch(&data.live, b, self.config.patch_size_gan, &mut self.rng)?;
        let (a_c, a_m) = random_targets(b, self.nets.n_c, self.nets.n_m, &mut self.rng);
        let pass = generator_pass(
            &self.parts(),
            &live.images,
            &a_c,
            &a_m,
            self.live_loss.current,
            &self.config.weights,
        )?;
        let GroupGrads { mut gen, bank, .. } = pass.grads;
        let mut bank = bank;
        if !pass.objective.is_finite() || !gen.all_finite() || !bank.as_ref().is_none_or(|g| g.all_finite()) {
            return Err(self.diverged(format!("generator objective {}", pass.objective)));
        }
        if let Some(c) = self.config.clip_grad_norm {
            let mut groups: Vec<&mut Grads<f32>> = vec![&mut gen];
            groups.extend(bank.as_mut());
            clip_global_norm(&mut groups, c);
        }
        self.opt_gen.step(self.nets.gen.params_mut(), &gen);
        if let (Some(opt), Some(bk), Some(g)) = (self.opt_bank.as_mut(), self.bank.as_mut(), bank.as_ref()) {
            opt.step(bk.params_mut(), g);
            if !bk.all_finite() {
                return Err(self.diverged("prototype bank became non-finite".into()));
            }
        }
        self.step += 1;
        Ok(MetricsRecord {
            step: self.step,
            phase: "gen".into(),
            j_vis: pass.terms.vis,
            j_disc: pass.terms.disc,
            s_c: pass.s_c,
            s_m: pass.s_m,
            j: pass.objective,
        })
    }

    fn disc_batch(&mut self, data: &GanData) -> Result<DiscBatch<f32>> {
        let (b, p) = (self.config.batch_size, self.config.patch_size_gan);
        let spoof = data.store.sample_batch(&data.spoof, b, p, &mut self.rng)?;
        let live = data.store.sample_batch(&data.live, b, p, &mut self.rng)?;
        let (target_a_c, target_a_m) = random_targets(b, self.nets.n_c, self.nets.n_m, &mut self.rng);
        Ok(DiscBatch {
            spoof: spoof.images,
            spoof_a_c: spoof.sensor_onehot,
            spoof_a_m: spoof.medium_onehot,
            live: live.images,
            live_a_c: live.sensor_onehot,
            live_a_m: live.medium_onehot,
            target_a_c,
            target_a_m,
        })
    }

    /// One update of the discriminator and the classifier.
    pub fn disc_step(&mut self, data: &GanData) -> Result<MetricsRecord> {
        let batch = self.disc_batch(data)?;
        let pass = discriminator_pass(&self.parts(), &batch, &self.config.weights)?;
        let GroupGrads { mut disc, mut lab, .. } = pass.grads;
        if !pass.objective.is_finite() || !disc.all_finite() || !lab.all_finite() {
            return Err(self.diverged(format!("discriminator objective {}", pass.objective)));
        }
        if let Some(c) = self.config.clip_grad_norm {
            clip_global_norm(&mut [&mut disc, &mut lab], c);
        }
        self.opt_disc.step(self.nets.disc.params_mut(), &disc);
        self.opt_lab.step(self.nets.lab.params_mut(), &lab);
        self.live_loss.update(pass.live_loss.s_c, pass.live_loss.s_m);
        self.step += 1;
        Ok(MetricsRecord {
            step: self.step,
            phase: "disc".into(),
            j_vis: pass.vis,
            j_disc: pass.disc,
            s_c: pass.s_c,
            s_m: pass.s_m,
            j: pass.objective,
        })
    }

    /// `steps_per_phase` generator updates followed by as many
    /// discriminator/classifier updates.
    pub fn run_round(&mut self, data: &GanData, log: &mut MetricsLog) -> Result<()> {
        for _ in 0..self.config.steps_per_phase {
            let rec = self.gen_step(data)?;
            log.push(rec)?;
        }
        for _ in 0..self.config.steps_per_phase {
            let rec = self.disc_step(data)?;
            log.push(rec)?;
        }
        self.round += 1;
        Ok(())
    }

    /// Runs until `total_rounds` rounds are complete, saving periodic
    /// checkpoints into `out_dir` when given.
    pub fn run(&mut self, data: &GanData, log: &mut MetricsLog, out_dir: Option<&Path>) -> Result<()> {
        self.check_data(data)?;
        let total = self.config.total_rounds as u64;
        let every = self.config.checkpoint_every as u64;
        while self.round < total {
            self.run_round(data, log)?;
            if self.round.is_multiple_of(50) || self.round == total {
                if let Some(r) = log.records.last() {
                    info!("round {}/{total}: J={:.4} J_disc={:.4}", self.round, r.j, r.j_disc);
                }
            }
            if let Some(dir) = out_dir {
                if every > 0 && self.round.is_multiple_of(every) && self.round < total {
                    self.checkpoint().save(&dir.join(format!("round-{:06}.ckpt", self.round)))?;
                }
            }
        }
        log.flush()
    }

    /// Fraction of real spoof and synthesized patches the discriminator labels
    /// correctly, drawn with a separate generator so training is unaffected.
    pub fn disc_accuracy(&self, data: &GanData, batches: usize, seed: u64) -> Result<f64> {
        let mut probe = self.clone();
        probe.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..batches.max(1) {
            let batch = probe.disc_batch(data)?;
            acc += discriminator_pass(&probe.parts(), &batch, &probe.config.weights)?.disc_accuracy;
        }
        Ok(acc / batches.max(1) as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut optimizers = std::collections::BTreeMap::new();
        optimizers.insert("gen".to_string(), self.opt_gen.clone());
        optimizers.insert("disc".to_string(), self.opt_disc.clone());
        optimizers.insert("lab".to_string(), self.opt_lab.clone());
        if let Some(o) = &self.opt_bank {
            optimizers.insert("bank".to_string(), o.clone());
        }
        Checkpoint {
            kind: CheckpointKind::Gan,
            config: self.config.clone(),
            nets: self.nets.clone(),
            bank: self.bank.clone(),
            optimizers,
            step: self.step,
            round: self.round,
            rng: RngState::capture(&self.rng),
            live_loss: self.live_loss,
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.kind != CheckpointKind::Gan {
            return Err(GoasError::Checkpoint(format!("expected a GAN checkpoint, got {:?}", ck.kind)));
        }
        let mut opts = ck.optimizers;
        let mut take = |k: &str| {
            opts.remove(k)
                .ok_or_else(|| GoasError::Checkpoint(format!("missing optimizer state `{k}`")))
        };
        let opt_gen = take("gen")?;
        let opt_disc = take("disc")?;
        let opt_lab = take("lab")?;
        let opt_bank = if ck.bank.is_some() { Some(take("bank")?) } else { None };
        Ok(GanTrainer {
            config: ck.config,
            nets: ck.nets,
            bank: ck.bank,
            opt_gen,
            opt_bank,
            opt_disc,
            opt_lab,
            rng: ck.rng.restore()?,
            live_loss: ck.live_loss,
            step: ck.step,
            round: ck.round,
            diagnostic_dir: None,
        })
    }
}

/// Result of a complete training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
}

/// File names used inside a training output directory.
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Alternating generator/discriminator training on the train split of
/// `manifest`. With `out_dir`, writes the metrics log, periodic checkpoints
/// and the final checkpoint there.
pub fn alternating_train(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    mode: GeneratorMode,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let data = GanData::load(manifest)?;
    let mut trainer = GanTrainer::new(config, manifest.n_c, manifest.n_m, mode)?;
    trainer.diagnostic_dir = out_dir.map(Path::to_path_buf);
    let mut log = match out_dir {
        Some(d) => MetricsLog::to_file(&d.join(METRICS_FILE))?,
        None => MetricsLog::in_memory(),
    };
    trainer.run(&data, &mut log, out_dir)?;
    let checkpoint = trainer.checkpoint();
    if let Some(d) = out_dir {
        checkpoint.save(&d.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics: std::mem::take(&mut log.records),
    })
}

/// The no-prototype baseline: the generator sees constant one-hot maps.
pub fn ablation_onehot_maps(manifest: &DatasetManifest, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    alternating_train(manifest, config, GeneratorMode::OnehotMaps, out_dir)
}
