//! Prototype selection and gradient routing to the bank.

#![allow(dead_code)]

use goas_core::losses::{LiveLabLoss, LossWeights};
use goas_core::networks::GeneratorMode;
use goas_core::noise_bank::{InitScheme, NoisePrototypeBank};
use goas_core::training::{
    discriminator_pass, generator_pass, random_targets, DiscBatch, GanData, GanTrainer, MetricsLog,
};
use goas_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common;

pub fn onehot(i: usize, k: usize) -> Vec<f64> {
    (0..k).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

/// One-hot weights select exactly the stored prototype.
pub fn assert_onehot_selection(seed: u64, n_c: usize, n_m: usize) {
    let bank = NoisePrototypeBank::<f64>::init(n_c, n_m, 8, InitScheme::Gaussian { std: 1.0 }, seed).unwrap();
    for c in 0..n_c {
        for m in 0..n_m {
            let sel = bank.select(&onehot(c, n_c), &onehot(m, n_m)).unwrap();
            assert!(sel.sensor == bank.sensor_prototype(c), "sensor {c}");
            assert!(sel.medium == bank.medium_prototype(m), "medium {m}");
        }
    }
}

/// select(alpha a + beta b) equals alpha select(a) + beta select(b) to 1e-6 relative.
pub fn assert_linear_selection(seed: u64, wa: &[f64], wb: &[f64], alpha: f64, beta: f64) {
    let bank = NoisePrototypeBank::<f64>::init(3, 3, 8, InitScheme::Gaussian { std: 1.0 }, seed).unwrap();
    let mixed: Vec<f64> = wa.iter().zip(wb).map(|(a, b)| alpha * a + beta * b).collect();
    let s = bank.select(&mixed[..3], &mixed[3..]).unwrap();
    let a = bank.select(&wa[..3], &wa[3..]).unwrap();
    let b = bank.select(&wb[..3], &wb[3..]).unwrap();
    let scale = s.sensor.iter().chain(&s.medium).fold(1e-12f64, |m, v| m.max(v.abs()));
    let pairs = s
        .sensor
        .iter()
        .zip(a.sensor.iter().zip(&b.sensor))
        .chain(s.medium.iter().zip(a.medium.iter().zip(&b.medium)));
    for (&v, (&x, &y)) in pairs {
        let lin = alpha * x + beta * y;
        assert!((v - lin).abs() <= 1e-6 * scale.max(lin.abs()), "{v} vs {lin}");
    }
}

/// Runs both selection properties over `cases` random draws.
pub fn selection_properties(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..cases {
        assert_onehot_selection(rng.random(), rng.random_range(1..5), rng.random_range(2..5));
        let mut w = || (0..6).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let (wa, wb) = (w(), w());
        assert_linear_selection(rng.random(), &wa, &wb, rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    }
}

fn batch_for(data: &GanData, t: &GanTrainer, rng: &mut ChaCha8Rng) -> (Tensor<f32>, DiscBatch<f32>) {
    let size = t.config.patch_size_gan;
    let live = data.store.sample_batch(&data.live, 4, size, rng).unwrap();
    let spoof = data.store.sample_batch(&data.spoof, 4, size, rng).unwrap();
    let (target_a_c, target_a_m) = random_targets(4, 3, 3, rng);
    let images = live.images.clone();
    (
        images,
        DiscBatch {
            spoof: spoof.images,
            spoof_a_c: spoof.sensor_onehot,
            spoof_a_m: spoof.medium_onehot,
            live: live.images,
            live_a_c: live.sensor_onehot,
            live_a_m: live.medium_onehot,
            target_a_c,
            target_a_m,
        },
    )
}

pub fn bank_gradient_flows_only_through_the_generator_objective() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::toy_dataset(dir.path(), 3);
    let data = GanData::load(&manifest).unwrap();
    let mut t = GanTrainer::new(&common::toy_config(), 3, 3, GeneratorMode::Prototypes).unwrap();
    // A fresh generator is the identity; one round gives it a non-trivial
    // dependence on its conditioning input.
    t.run_round(&data, &mut MetricsLog::in_memory()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (live, batch) = batch_for(&data, &t, &mut rng);
    let weights = LossWeights::default();
    let live_loss = LiveLabLoss { s_c: 1.0, s_m: 1.0 };
    let g = generator_pass(&t.parts(), &live, &batch.target_a_c, &batch.target_a_m, live_loss, &weights).unwrap();
    let bank_grads = g.grads.bank.as_ref().unwrap();
    assert!(!bank_grads.is_zero());
    assert!(bank_grads.all_finite());

    // Only the selected prototypes receive gradient.
    let plane = t.config.patch_size_gan * t.config.patch_size_gan;
    let used_c: Vec<bool> = (0..3)
        .map(|k| (0..4).any(|b| batch.target_a_c.row(b)[k] != 0.0))
        .collect();
    for (k, used) in used_c.iter().enumerate() {
        let nonzero = bank_grads.0[0][k * plane..(k + 1) * plane].iter().any(|&v| v != 0.0);
        assert!(nonzero || !used, "sensor prototype {k}");
        assert!(!nonzero || *used, "unselected sensor prototype {k} got gradient");
    }
    assert!(bank_grads.0[1][..plane].iter().all(|&v| v == 0.0), "live medium is never a target");

    let d = discriminator_pass(&t.parts(), &batch, &weights).unwrap();
    assert!(d.grads.bank.as_ref().unwrap().is_zero());
    assert!(d.grads.gen.is_zero());
}
