//! Alternating adversarial training, the supervised classifier and
//! binary-map runs, checkpoints and generator-based augmentation.
//!
//! Determinism holds for a fixed seed: every random draw comes from one
//! ChaCha8 stream per run, whose position is stored in checkpoints.

mod augment;
mod checkpoint;
mod config;
mod gan;
mod metrics;
mod objective;
mod supervised;

pub use augment::{all_spoof_combos, augmentation_pool, default_pool_per_combo, synthesize_augmentation_pool};
pub use checkpoint::{Checkpoint, CheckpointKind, FORMAT_VERSION, MAGIC};
pub use config::{RngState, TrainConfig};
pub use gan::{
    ablation_onehot_maps, alternating_train, clip_global_norm, random_targets, GanData, GanTrainer, TrainOutcome,
    CHECKPOINT_FILE, METRICS_FILE,
};
pub use metrics::{read_metrics, MetricsLog, MetricsRecord};
pub use objective::{
    discriminator_pass, generator_input, generator_pass, synthesize, DiscBatch, DiscriminatorPass, GanParts,
    GeneratorPass, GroupGrads,
};
pub use supervised::{train_golab_standalone, train_gopad, EpochPlan};
