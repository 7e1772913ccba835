//! Phase isolation, determinism and checkpoint resume of the alternating trainer.

#![allow(dead_code)]

use goas_core::networks::{GeneratorMode, Module};
use goas_core::training::{alternating_train, Checkpoint, GanData, GanTrainer, MetricsLog, TrainConfig};

use crate::common;

fn snapshot(ps: Vec<&Vec<f32>>) -> Vec<Vec<f32>> {
    ps.into_iter().cloned().collect()
}

pub fn one_round_is_one_update_per_phase_and_frozen_groups_stay_put() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_dataset(dir.path(), 1);
    let config = TrainConfig {
        total_rounds: 10,
        ..common::toy_config()
    };
    let data = GanData::load(&manifest).unwrap();
    let mut t = GanTrainer::new(&config, 3, 3, GeneratorMode::Prototypes).unwrap();
    let mut log = MetricsLog::in_memory();
    let initial_bank = t.bank.clone();
    for _ in 0..10 {
        let disc = snapshot(t.nets.disc.params());
        let lab = snapshot(t.nets.lab.params());
        let gen = snapshot(t.nets.gen.params());
        log.push(t.gen_step(&data).unwrap()).unwrap();
        assert!(snapshot(t.nets.disc.params()) == disc);
        assert!(snapshot(t.nets.lab.params()) == lab);
        assert!(snapshot(t.nets.gen.params()) != gen);

        let gen = snapshot(t.nets.gen.params());
        let bank = t.bank.clone();
        let disc = snapshot(t.nets.disc.params());
        log.push(t.disc_step(&data).unwrap()).unwrap();
        assert_eq!(snapshot(t.nets.gen.params()), gen);
        assert!(t.bank == bank);
        assert!(snapshot(t.nets.disc.params()) != disc);
    }
    // The zero-initialised output layer passes no gradient to the bank at
    // the very first step, so only later steps move it.
    assert!(t.bank != initial_bank);
    assert_eq!(t.step, 20);
    assert_eq!(t.opt_gen.t, 10);
    assert_eq!(t.opt_disc.t, 10);
    let steps: Vec<u64> = log.records.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[1] > w[0]));
    assert!(log.records.iter().all(|r| r.all_finite()));
}

pub fn fixed_seed_reruns_produce_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_dataset(dir.path(), 2);
    let config = common::toy_config();
    let a = alternating_train(&manifest, &config, GeneratorMode::Prototypes, None).unwrap();
    let b = alternating_train(&manifest, &config, GeneratorMode::Prototypes, None).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.len(), 2 * config.total_rounds);
}

pub fn checkpoint_resume_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_dataset(&dir.path().join("data"), 3);
    let data = GanData::load(&manifest).unwrap();
    let config = common::toy_config();

    let mut straight = GanTrainer::new(&config, 3, 3, GeneratorMode::Prototypes).unwrap();
    let mut log_a = MetricsLog::in_memory();
    for _ in 0..4 {
        straight.run_round(&data, &mut log_a).unwrap();
    }

    let mut first = GanTrainer::new(&config, 3, 3, GeneratorMode::Prototypes).unwrap();
    let mut log_b = MetricsLog::in_memory();
    for _ in 0..2 {
        first.run_round(&data, &mut log_b).unwrap();
    }
    let path = dir.path().join("mid.ckpt");
    first.checkpoint().save(&path).unwrap();
    let mut resumed = GanTrainer::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
    for _ in 0..2 {
        resumed.run_round(&data, &mut log_b).unwrap();
    }
    assert_eq!(log_a.records, log_b.records);
    assert_eq!(snapshot(straight.nets.gen.params()), snapshot(resumed.nets.gen.params()));
    assert_eq!(snapshot(straight.nets.disc.params()), snapshot(resumed.nets.disc.params()));
    assert_eq!(snapshot(straight.nets.lab.params()), snapshot(resumed.nets.lab.params()));
    assert_eq!(straight.bank, resumed.bank);
}

