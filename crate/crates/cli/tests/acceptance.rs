//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criterion numbers given as arguments select a
//! subset: `cargo test -p goas-cli --test acceptance -- 1 2 9`.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../core/tests/suites/gradients.rs"]
mod gradients;
#[path = "../../core/tests/suites/phases.rs"]
mod phases;
#[path = "../../core/tests/suites/prototypes.rs"]
mod prototypes;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use goas_core::dataset::{
    generate_synthetic_dataset, onehot, Coverage, DatasetManifest, FrameStore, Split, SynthLayout, SyntheticNoiseSpec,
};
use goas_core::evaluation::reference::{pairwise_auc, sweep_eer};
use goas_core::evaluation::{
    compute_auc, compute_eer, confusion_matrices, majority_accuracy, score_split, EvalOptions, MetricsReport,
    VideoLabel, VideoScore,
};
use goas_core::losses::LossWeights;
use goas_core::networks::{ArchConfig, GeneratorMode, GoPad, Module};
use goas_core::noise_bank::spectral_correlation;
use goas_core::spectrum::Plane;
use goas_core::training::{
    all_spoof_combos, augmentation_pool, default_pool_per_combo, synthesize, train_golab_standalone, train_gopad,
    GanData, GanTrainer, MetricsLog, TrainConfig,
};
use goas_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "metric oracles", budget: minutes(1), run: metric_oracles },
    Criterion { id: 2, name: "gradient suite", budget: minutes(2), run: gradient_suite },
    Criterion { id: 3, name: "prototype mechanics", budget: minutes(1), run: prototype_mechanics },
    Criterion { id: 4, name: "phase isolation and determinism", budget: minutes(2), run: phase_isolation },
    Criterion { id: 5, name: "synthetic ground-truth recovery", budget: minutes(60), run: ground_truth_recovery },
    Criterion { id: 6, name: "targeted synthesis", budget: minutes(20), run: targeted_synthesis },
    Criterion { id: 7, name: "augmentation trend", budget: minutes(45), run: augmentation_trend },
    Criterion { id: 8, name: "binary-map baseline", budget: minutes(15), run: binary_map_baseline },
    Criterion { id: 9, name: "end-to-end CLI", budget: minutes(10), run: end_to_end_cli },
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| Err(panic_message(p)));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > c.budget => Err(format!("{d}; over the {}s budget", c.budget.as_secs())),
            o => o,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} ({}): {status} [{:.1}s] {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_checks(checks: &[(&str, fn())]) -> Outcome {
    for (name, f) in checks {
        catch_unwind(*f).map_err(|p| format!("{name}: {}", panic_message(p)))?;
    }
    Ok(format!("{} checks", checks.len()))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_eer = 0.0f64;
    for set in 0..1000 {
        let n = rng.random_range(2..=200);
        let mut scores: Vec<VideoScore> = (0..n)
            .map(|i| {
                let label = if rng.random_bool(0.5) { VideoLabel::Spoof } else { VideoLabel::Live };
                VideoScore::bare(format!("v{i}"), rng.random_range(0..=200) as f64 / 200.0, label)
            })
            .collect();
        scores[0].label = VideoLabel::Live;
        scores[1].label = VideoLabel::Spoof;
        let auc = compute_auc(&scores).map_err(|e| e.to_string())?;
        if auc != pairwise_auc(&scores) {
            return Err(format!("set {set}: AUC {auc} vs pairwise {}", pairwise_auc(&scores)));
        }
        let (eer, _) = compute_eer(&scores).map_err(|e| e.to_string())?;
        worst_eer = worst_eer.max((eer - sweep_eer(&scores, 0.0, 1.0, 10_000)).abs());
    }
    check(worst_eer <= 0.5, format!("AUC exact on 1000 sets, worst EER gap {worst_eer:.3} pp"))
}

fn gradient_suite() -> Outcome {
    run_checks(gradients::CHECKS)
}

fn prototype_mechanics() -> Outcome {
    run_checks(&[
        ("selection identity and linearity", || prototypes::selection_properties(200)),
        ("bank gradient flow", prototypes::bank_gradient_flows_only_through_the_generator_objective),
    ])
}

fn phase_isolation() -> Outcome {
    run_checks(&[
        ("frozen groups over 10 rounds", phases::one_round_is_one_update_per_phase_and_frozen_groups_stay_put),
        ("checkpoint resume", phases::checkpoint_resume_is_bit_identical),
        ("fixed-seed rerun", phases::fixed_seed_reruns_produce_identical_logs),
    ])
}

/// 3 sensors x 3 mediums on 64px frames, 4 frames per video.
fn procedural(dir: &Path, amplitude: f64, seed: u64, coverage: &Coverage) -> (SyntheticNoiseSpec, DatasetManifest) {
    let spec = SyntheticNoiseSpec::procedural(3, 3, 64, 16, amplitude, seed).unwrap();
    let manifest = generate_synthetic_dataset(&spec, coverage, 4, SynthLayout::default(), dir).unwrap();
    (spec, manifest)
}

fn classifier_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        patch_size_gan: 32,
        golab_steps: 600,
        patches_per_epoch: 512,
        lr_lab: 1e-3,
        beta1: 0.9,
        arch: ArchConfig::compact(),
        seed,
        ..TrainConfig::default()
    }
}

fn gan_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        patch_size_gan: 32,
        total_rounds: 600,
        lr_gen: 2e-4,
        lr_disc: 2e-4,
        lr_bank: Some(1e-2),
        arch: ArchConfig::compact(),
        weights: LossWeights { lambda0: 20.0, lambda1: 5.0 },
        seed,
        ..TrainConfig::default()
    }
}

fn ground_truth_recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = procedural(dir.path(), 0.08, 1, &Coverage::uniform(3, 3, 5));
    let out = train_golab_standalone(&manifest, &classifier_config(3), None, None).map_err(|e| e.to_string())?;
    let conf = confusion_matrices(&out.checkpoint, &manifest, Split::Test, &EvalOptions::default())
        .map_err(|e| e.to_string())?;
    check(
        conf.sensor_accuracy >= 90.0 && conf.medium_accuracy >= 80.0,
        format!(
            "{} test videos, {} steps: sensor {:.1}%, medium {:.1}%",
            conf.videos,
            out.checkpoint.step,
            conf.sensor_accuracy,
            conf.medium_accuracy
        ),
    )
}

/// Fraction of (patch, target) pairs whose residual correlates best with the
/// target medium's ground-truth pattern.
fn targeted_fraction(trainer: &GanTrainer, spec: &SyntheticNoiseSpec, manifest: &DatasetManifest) -> f64 {
    let size = trainer.config.patch_size_gan;
    let (n_c, n_m) = (manifest.n_c, manifest.n_m);
    let store = FrameStore::load(manifest, |r| r.split == Split::Test && r.is_live()).unwrap();
    let pool: Vec<usize> = (0..store.len()).collect();
    let live = store.sample_batch(&pool, 60, size, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let truth: Vec<Plane> = spec
        .per_medium_patterns
        .iter()
        .map(|p| Plane::from_fn(size, size, |y, x| p.at(y, x)))
        .collect();
    let n = live.len();
    let plane = size * size;
    let (mut wins, mut total) = (0, 0);
    for m in 1..n_m {
        let a_c = Tensor::matrix(n, n_c, (0..n).flat_map(|i| onehot(i % n_c, n_c)).collect()).unwrap();
        let a_m = Tensor::matrix(n, n_m, (0..n).flat_map(|_| onehot(m, n_m)).collect()).unwrap();
        let out = synthesize(&trainer.parts(), &live.images, &a_c, &a_m).unwrap();
        for b in 0..n {
            let (o, i) = (out.sample(b), live.images.sample(b));
            let residual = Plane::from_fn(size, size, |y, x| {
                (0..3).map(|c| (o[c * plane + y * size + x] - i[c * plane + y * size + x]) as f64).sum::<f64>() / 3.0
            });
            let own = spectral_correlation(&residual, &truth[m]).unwrap_or(f64::NEG_INFINITY);
            let beaten = (1..n_m)
                .filter(|&k| k != m)
                .all(|k| spectral_correlation(&residual, &truth[k]).map_or(true, |c| own > c));
            wins += beaten as usize;
            total += 1;
        }
    }
    wins as f64 / total as f64
}

fn targeted_synthesis() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (spec, manifest) = procedural(dir.path(), 0.08, 1, &Coverage::uniform(3, 3, 5));
    let data = GanData::load(&manifest).map_err(|e| e.to_string())?;
    let mut trainer = GanTrainer::new(&gan_config(3), 3, 3, GeneratorMode::Prototypes).map_err(|e| e.to_string())?;
    trainer.run(&data, &mut MetricsLog::in_memory(), None).map_err(|e| e.to_string())?;
    let fraction = targeted_fraction(&trainer, &spec, &manifest);
    check(
        fraction >= 0.7,
        format!("{:.1}% of held-out live patches follow the target medium", 100.0 * fraction),
    )
}

fn augmentation_trend() -> Outcome {
    // Spoof training videos only for 2 of the 6 (sensor, spoof medium) pairs.
    let kept = [(0usize, 1usize), (1, 2)];
    let opts = EvalOptions::default();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let dir = tempfile::tempdir().unwrap();
        let (_, full) = procedural(dir.path(), 0.08, seed, &Coverage::uniform(3, 3, 4));
        let manifest =
            full.subset(|r| r.split == Split::Test || r.is_live() || kept.contains(&(r.sensor_id, r.medium_id)));
        let lab = TrainConfig {
            patches_per_epoch: 200,
            augment_ratio: 0.5,
            ..classifier_config(seed)
        };
        let auc = |ck| -> Result<f64, String> {
            let s = score_split(ck, &manifest, Split::Test, &opts).map_err(|e| e.to_string())?;
            compute_auc(&s).map_err(|e| e.to_string())
        };
        let alone = train_golab_standalone(&manifest, &lab, None, None).map_err(|e| e.to_string())?;
        let auc_alone = auc(&alone.checkpoint)?;

        let gan = gan_config(seed);
        let data = GanData::load(&manifest).map_err(|e| e.to_string())?;
        let mut trainer = GanTrainer::new(&gan, 3, 3, GeneratorMode::Prototypes).map_err(|e| e.to_string())?;
        trainer.run(&data, &mut MetricsLog::in_memory(), None).map_err(|e| e.to_string())?;
        let combos = all_spoof_combos(3, 3);
        let pool = augmentation_pool(
            &trainer.checkpoint(),
            &manifest,
            &combos,
            default_pool_per_combo(&lab, combos.len()),
            seed + 5,
        )
        .map_err(|e| e.to_string())?;
        let augmented = train_golab_standalone(&manifest, &lab, Some(&pool), None).map_err(|e| e.to_string())?;
        let auc_aug = auc(&augmented.checkpoint)?;
        wins += (auc_aug >= auc_alone) as usize;
        rows.push(format!("seed {seed}: {auc_alone:.1} -> {auc_aug:.1}"));
    }
    check(wins >= 2, format!("AUC alone -> augmented, {}; {wins}/3 not worse", rows.join(", ")))
}

fn binary_map_baseline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = procedural(dir.path(), 0.2, 1, &Coverage::uniform(3, 3, 5));
    let config = TrainConfig {
        batch_size: 16,
        patch_size_pad: 32,
        gopad_steps: 600,
        lr_pad: 1e-3,
        beta1: 0.9,
        arch: ArchConfig { pad_map_size: 8, ..ArchConfig::compact() },
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train_gopad(&manifest, &config, None).map_err(|e| e.to_string())?;
    let scores = score_split(&out.checkpoint, &manifest, Split::Test, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let accuracy = majority_accuracy(&scores);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let reference_arch = ArchConfig::default();
    let reduced = GoPad::<f32>::new(&reference_arch, &reference_arch.pad_channels, 256, &mut rng).unwrap();
    let reference = GoPad::<f32>::new(&reference_arch, &reference_arch.reference_pad_channels(), 256, &mut rng).unwrap();
    let (p, r) = (reduced.param_count(), reference.param_count());
    check(
        accuracy >= 0.85 && 3 * p <= r && 3 * out.checkpoint.nets.pad.param_count() <= r,
        format!("video accuracy {:.1}% over {} videos; parameters {p} vs reference {r}", 100.0 * accuracy, scores.len()),
    )
}

fn goas(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_goas"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("goas {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)))
    }
}

fn end_to_end_cli() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    goas(&["synth-data", "--out", &p("data"), "--videos-per-combo", "2", "--frames", "2", "--seed", "5"])?;
    goas(&[
        "train", "golab", "--manifest", &p("data"), "--out", &p("run"),
        "--set", "golab_steps=60", "--set", "patch_size_gan=32", "--set", "batch_size=8",
        "--set", "patches_per_epoch=64", "--set", "lab.channels=[4,4,4,4,4,4,8,8,8,8,8]",
        "--set", "lab.hidden=8",
    ])?;
    let report = format!("{}/report.json", p("run"));
    goas(&[
        "eval", "--checkpoint", &format!("{}/checkpoint.ckpt", p("run")), "--manifest", &p("data"),
        "--patches", "5", "--report", &report, "--roc-dir", &p("run/roc"),
    ])?;
    let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for key in ["auc", "eer", "hter", "eer_threshold", "hter_threshold", "roc_points", "counts"] {
        if value.get(key).is_none() {
            return Err(format!("report lacks `{key}`"));
        }
    }
    let parsed: MetricsReport = serde_json::from_value(value).map_err(|e| e.to_string())?;
    if !(0.0..=100.0).contains(&parsed.auc) || parsed.roc_points.is_empty() {
        return Err(format!("implausible report: auc {}", parsed.auc));
    }
    let mut pngs = 0;
    for entry in std::fs::read_dir(p("run/roc")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.file_name().unwrap().to_str().unwrap().starts_with("roc") {
            image::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            pngs += 1;
        }
    }
    check(pngs > 0, format!("report AUC {:.1}, {pngs} ROC images", parsed.auc))
}
