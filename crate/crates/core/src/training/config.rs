use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{GoasError, Result};
use crate::losses::LossWeights;
use crate::networks::ArchConfig;
use crate::noise_bank::InitScheme;

/// Training hyperparameters. Serialized as one flat JSON object; the
/// architecture and loss weights share the same namespace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_size_gan: usize,
    pub patch_size_pad: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Learning rate of the standalone classifier run.
    pub lr_lab: f64,
    pub lr_pad: f64,
    /// Learning rate of the prototype bank; `None` uses `lr_gen`.
    #[serde(default)]
    pub lr_bank: Option<f64>,
    /// L2 decay on the prototype bank.
    #[serde(default)]
    pub bank_weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub steps_per_phase: usize,
    pub total_rounds: usize,
    /// Update count of the standalone classifier run.
    pub golab_steps: usize,
    pub gopad_steps: usize,
    /// Real patches drawn per classifier epoch.
    pub patches_per_epoch: usize,
    /// Synthetic patches per epoch as a fraction of the real count.
    pub augment_ratio: f64,
    /// Prototype bank initialisation, e.g. `gaussian:0.01` or `zeros`.
    pub bank_init: String,
    /// Save a checkpoint every this many rounds (0 = final only).
    pub checkpoint_every: usize,
    /// Optional global gradient-norm clip; `None` aborts on divergence only.
    pub clip_grad_norm: Option<f64>,
    pub seed: u64,
    #[serde(flatten)]
    pub weights: LossWeights,
    #[serde(flatten)]
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 40,
            patch_size_gan: 64,
            patch_size_pad: 256,
            lr_gen: 1e-4,
            lr_disc: 1e-4,
            lr_lab: 1e-4,
            lr_pad: 1e-4,
            lr_bank: None,
            bank_weight_decay: 0.0,
            beta1: 0.5,
            beta2: 0.999,
            steps_per_phase: 1,
            total_rounds: 1000,
            golab_steps: 2000,
            gopad_steps: 1000,
            patches_per_epoch: 1000,
            augment_ratio: 0.1,
            bank_init: "gaussian:0.01".into(),
            checkpoint_every: 0,
            clip_grad_norm: None,
            seed: 0,
            weights: LossWeights::default(),
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Overlays `overrides` (a flat JSON object) on `self`, rejecting keys
    /// that are not configuration fields.
    pub fn with_overrides(&self, overrides: &Map<String, Value>) -> Result<Self> {
        let Value::Object(mut merged) = serde_json::to_value(self)? else {
            unreachable!("config serializes to an object")
        };
        for (k, v) in overrides {
            if !merged.contains_key(k) {
                return Err(GoasError::Config(format!("unknown config key `{k}`")));
            }
            merged.insert(k.clone(), v.clone());
        }
        let cfg: TrainConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| GoasError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| GoasError::Config(e.to_string()))?;
        match value {
            Value::Object(map) => TrainConfig::default().with_overrides(&map),
            _ => Err(GoasError::Config("config must be a JSON object".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GoasError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn bank_init_scheme(&self) -> Result<InitScheme> {
        self.bank_init.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("patch_size_gan", self.patch_size_gan),
            ("patch_size_pad", self.patch_size_pad),
            ("steps_per_phase", self.steps_per_phase),
            ("patches_per_epoch", self.patches_per_epoch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GoasError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("lr_gen", self.lr_gen),
            ("lr_disc", self.lr_disc),
            ("lr_lab", self.lr_lab),
            ("lr_pad", self.lr_pad),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GoasError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(v) = self.lr_bank {
            if !(v.is_finite() && v > 0.0) {
                return Err(GoasError::Config(format!("lr_bank must be positive, got {v}")));
            }
        }
        if !(self.bank_weight_decay.is_finite() && self.bank_weight_decay >= 0.0) {
            return Err(GoasError::Config("bank_weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GoasError::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.augment_ratio.is_finite() && self.augment_ratio >= 0.0) {
            return Err(GoasError::Config("augment_ratio must be nonnegative".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(GoasError::Config("clip_grad_norm must be positive".into()));
            }
        }
        self.weights.validate()?;
        self.arch.validate()?;
        self.bank_init_scheme()?;
        Ok(())
    }
}

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// 32 seed bytes as hex.
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (the counter exceeds 64 bits).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || GoasError::Checkpoint("malformed RNG state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}
