#![allow(dead_code)]

use std::path::Path;

use goas_core::dataset::{generate_synthetic_dataset, Coverage, DatasetManifest, SynthLayout, SyntheticNoiseSpec};
use goas_core::networks::ArchConfig;
use goas_core::training::TrainConfig;

/// 3 sensors x 3 mediums, two videos per combination, 32px frames.
pub fn toy_dataset(dir: &Path, seed: u64) -> DatasetManifest {
    let spec = SyntheticNoiseSpec::procedural(3, 3, 32, 16, 0.08, seed).unwrap();
    generate_synthetic_dataset(&spec, &Coverage::uniform(3, 3, 2), 2, SynthLayout::default(), dir).unwrap()
}

pub fn toy_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        patch_size_gan: 8,
        patch_size_pad: 16,
        total_rounds: 3,
        golab_steps: 5,
        gopad_steps: 5,
        patches_per_epoch: 12,
        arch: ArchConfig {
            pad_map_size: 4,
            ..ArchConfig::toy()
        },
        seed: 9,
        ..TrainConfig::default()
    }
}
