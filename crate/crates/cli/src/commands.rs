use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use goas_core::dataset::{
    generate_synthetic_dataset, load_manifest, Coverage, DatasetManifest, Frame, PatchBatch, Split, SynthLayout,
    SyntheticNoiseSpec, MANIFEST_FILE,
};
use goas_core::evaluation::{
    confusion_matrices, grouped_roc, plot, score_split, write_json, Aggregation, EvalOptions, GroupBy, MetricsReport,
    RocPoint,
};
use goas_core::networks::GeneratorMode;
use goas_core::noise_bank::log_power_spectrum;
use goas_core::training::{
    ablation_onehot_maps, all_spoof_combos, alternating_train, augmentation_pool, default_pool_per_combo,
    train_golab_standalone, train_gopad, Checkpoint, CheckpointKind, TrainConfig, TrainOutcome, CHECKPOINT_FILE,
    METRICS_FILE,
};
use goas_core::Tensor;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::args::*;
use crate::comparison::ComparisonTable;
use crate::descriptor::RunDescriptor;
use crate::{Refused, CACHE_ENV};

const POOL_FILE: &str = "pool.jsonl";
const GROUPINGS: [(GroupBy, &str); 4] = [
    (GroupBy::Object, "object"),
    (GroupBy::Background, "background"),
    (GroupBy::Sensor, "sensor"),
    (GroupBy::Medium, "medium"),
];

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Augment(a) => augment(a),
        Command::Eval(a) => eval(a),
        Command::VizPrototypes(a) => viz_prototypes(a),
        Command::Report(a) => report(a),
    }
}

fn refuse(msg: impl Into<String>) -> anyhow::Error {
    Refused(msg.into()).into()
}

/// Creates `dir`, refusing to reuse a non-empty one without `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(refuse(format!("{} is a file", dir.display())));
    }
    let occupied = dir.is_dir() && fs::read_dir(dir)?.next().is_some();
    if occupied && !force {
        return Err(refuse(format!("{} is not empty; pass --force to overwrite", dir.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn prepare_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(refuse(format!("{} exists; pass --force to overwrite", path.display())));
    }
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// `path` as given, or under the cache directory when only found there.
fn resolve_input(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match cache_dir().map(|c| c.join(path)) {
        Some(p) if p.exists() => p,
        _ => path.to_path_buf(),
    }
}

fn load_dataset(path: &Path) -> Result<DatasetManifest> {
    let p = resolve_input(path);
    let p = if p.is_dir() { p.join(MANIFEST_FILE) } else { p };
    Ok(load_manifest(&p)?)
}

pub(crate) fn parse_combos(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (c, m) = s
                .trim()
                .split_once(':')
                .ok_or_else(|| refuse(format!("combination `{s}` is not sensor:medium")))?;
            Ok((
                c.parse().map_err(|_| refuse(format!("bad sensor in `{s}`")))?,
                m.parse().map_err(|_| refuse(format!("bad medium in `{s}`")))?,
            ))
        })
        .collect()
}

fn synth_data(a: &SynthArgs) -> Result<()> {
    let out = match (&a.out, cache_dir()) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.join(format!(
            "procedural-c{}-m{}-k{}-f{}-s{}",
            a.sensors, a.mediums, a.videos_per_combo, a.frames, a.seed
        )),
        (None, None) => return Err(refuse(format!("pass --out or set {CACHE_ENV}"))),
    };
    let spec = SyntheticNoiseSpec::procedural(a.sensors, a.mediums, a.frame_size, a.period, a.amplitude, a.seed)?;
    let coverage = match &a.spoof_combos {
        None => Coverage::uniform(a.sensors, a.mediums, a.videos_per_combo),
        Some(text) => {
            let keep: BTreeSet<(usize, usize)> = parse_combos(text)?.into_iter().collect();
            if let Some(&(c, m)) = keep.iter().find(|&&(c, m)| c >= a.sensors || m == 0 || m >= a.mediums) {
                return Err(refuse(format!("spoof combination {c}:{m} out of range")));
            }
            Coverage::masked(a.sensors, a.mediums, a.videos_per_combo, |s, m| m == 0 || keep.contains(&(s, m)))
        }
    };
    prepare_out(&out, a.force)?;
    let desc = RunDescriptor::start(
        "synth-data",
        json!({
            "sensors": a.sensors,
            "mediums": a.mediums,
            "videos_per_combo": a.videos_per_combo,
            "frames": a.frames,
            "amplitude": a.amplitude,
            "frame_size": a.frame_size,
            "period": a.period,
            "spoof_combos": a.spoof_combos,
        }),
        a.seed,
    );
    let manifest = generate_synthetic_dataset(&spec, &coverage, a.frames, SynthLayout::default(), &out)?;
    desc.finish(&out)?;
    println!(
        "wrote {} videos ({} train, {} test) to {}",
        manifest.records.len(),
        manifest.split(Split::Train).count(),
        manifest.split(Split::Test).count(),
        out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn parse_override(kv: &str) -> Result<(String, Value)> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| refuse(format!("override `{kv}` is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let base = match &a.config {
        Some(p) => TrainConfig::load(&resolve_input(p))?,
        None => TrainConfig::default(),
    };
    let mut overrides = Map::new();
    for kv in &a.overrides {
        let (k, v) = parse_override(kv)?;
        overrides.insert(k, v);
    }
    if let Some(s) = a.seed {
        overrides.insert("seed".into(), json!(s));
    }
    if let Some(r) = a.augment_ratio {
        overrides.insert("augment_ratio".into(), json!(r));
    }
    Ok(base.with_overrides(&overrides)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolHeader {
    n_c: usize,
    n_m: usize,
    patch_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolEntry {
    file: String,
    sensor_id: usize,
    medium_id: usize,
    source_video: String,
}

fn write_pool(pool: &PatchBatch, n_c: usize, n_m: usize, dir: &Path) -> Result<()> {
    let size = pool.patch_size();
    let patches = dir.join("patches");
    fs::create_dir_all(&patches)?;
    let mut index = fs::File::create(dir.join(POOL_FILE))?;
    writeln!(index, "{}", serde_json::to_string(&PoolHeader { n_c, n_m, patch_size: size })?)?;
    let (sensors, mediums) = (pool.sensor_ids(), pool.medium_ids());
    let plane = size * size;
    for i in 0..pool.len() {
        let s = pool.images.sample(i);
        let mut rgb = vec![0u8; plane * 3];
        for p in 0..plane {
            for c in 0..3 {
                rgb[p * 3 + c] = (s[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let file = format!("patches/{i:06}.png");
        image::save_buffer(dir.join(&file), &rgb, size as u32, size as u32, image::ExtendedColorType::Rgb8)?;
        let entry = PoolEntry {
            file,
            sensor_id: sensors[i],
            medium_id: mediums[i],
            source_video: pool.source_video_ids.get(i).cloned().unwrap_or_default(),
        };
        writeln!(index, "{}", serde_json::to_string(&entry)?)?;
    }
    Ok(())
}

fn read_pool(dir: &Path) -> Result<PatchBatch> {
    let path = dir.join(POOL_FILE);
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header: PoolHeader = serde_json::from_str(&lines.next().ok_or_else(|| refuse("empty pool index"))??)?;
    let size = header.patch_size;
    let plane = size * size;
    let (mut data, mut sensors, mut mediums, mut sources) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for line in lines {
        let e: PoolEntry = serde_json::from_str(&line?)?;
        let frame = Frame::load(&dir.join(&e.file))?;
        if frame.width != size || frame.height != size {
            return Err(refuse(format!("{} is not {size}x{size}", e.file)));
        }
        let mut buf = vec![0f32; 3 * plane];
        frame.write_patch(0, 0, size, &mut buf);
        data.extend(buf);
        sensors.push(e.sensor_id);
        mediums.push(e.medium_id);
        sources.push(e.source_video);
    }
    let images = Tensor::from_vec([sensors.len(), 3, size, size], data)?;
    Ok(PatchBatch::labelled(images, &sensors, &mediums, header.n_c, header.n_m, sources)?)
}

fn classifier_pool(a: &TrainArgs, config: &TrainConfig, manifest: &DatasetManifest) -> Result<Option<PatchBatch>> {
    let Some(src) = &a.augment_from else {
        return Ok(None);
    };
    let mut src = resolve_input(src);
    if src.is_dir() && !src.join(POOL_FILE).exists() && src.join(CHECKPOINT_FILE).exists() {
        src = src.join(CHECKPOINT_FILE);
    }
    if src.is_dir() {
        let pool = read_pool(&src)?;
        info!("loaded {} synthetic patches from {}", pool.len(), src.display());
        return Ok(Some(pool));
    }
    let ck = Checkpoint::load(&src)?;
    if (ck.nets.n_c, ck.nets.n_m) != (manifest.n_c, manifest.n_m) {
        return Err(refuse(format!(
            "checkpoint has {}x{} classes, manifest {}x{}",
            ck.nets.n_c, ck.nets.n_m, manifest.n_c, manifest.n_m
        )));
    }
    let combos = all_spoof_combos(manifest.n_c, manifest.n_m);
    let per = a
        .augment_per_combo
        .unwrap_or_else(|| default_pool_per_combo(config, combos.len()));
    let pool = augmentation_pool(&ck, manifest, &combos, per, config.seed.wrapping_add(5))?;
    info!("synthesized {} patches ({per} per combination)", pool.len());
    Ok(Some(pool))
}

fn train(a: &TrainArgs) -> Result<()> {
    let manifest = load_dataset(&a.manifest)?;
    let config = resolve_config(a)?;
    if a.model != Model::Golab && (a.augment_from.is_some() || a.augment_ratio.is_some()) {
        return Err(refuse("augmentation applies to the golab classifier only"));
    }
    if a.model != Model::Gan && a.ablation.is_some() {
        return Err(refuse("--ablation applies to gan training only"));
    }
    prepare_out(&a.out, a.force)?;
    // The metrics log appends; a forced rerun starts it afresh.
    let _ = fs::remove_file(a.out.join(METRICS_FILE));
    let config_value = serde_json::to_value(&config)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&config_value)?)?;
    let desc = RunDescriptor::start("train", config_value, config.seed);

    let outcome: TrainOutcome = match a.model {
        Model::Gan => match a.ablation {
            Some(Ablation::OnehotMaps) => ablation_onehot_maps(&manifest, &config, Some(&a.out))?,
            None => alternating_train(&manifest, &config, GeneratorMode::Prototypes, Some(&a.out))?,
        },
        Model::Golab => {
            let pool = classifier_pool(a, &config, &manifest)?;
            train_golab_standalone(&manifest, &config, pool.as_ref(), Some(&a.out))?
        }
        Model::Gopad => train_gopad(&manifest, &config, Some(&a.out))?,
    };
    desc.finish(&a.out)?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "trained {} steps; last {} objective {:.4}; checkpoint {}",
            outcome.checkpoint.step,
            last.phase,
            last.j,
            a.out.join(CHECKPOINT_FILE).display()
        );
    }
    Ok(())
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let ck = Checkpoint::load(&resolve_input(&a.checkpoint))?;
    let manifest = load_dataset(&a.manifest)?;
    let combos = match &a.combos {
        Some(t) => parse_combos(t)?,
        None => all_spoof_combos(ck.nets.n_c, ck.nets.n_m),
    };
    prepare_out(&a.out, a.force)?;
    let desc = RunDescriptor::start(
        "augment",
        json!({ "checkpoint": a.checkpoint, "per_combo": a.per_combo, "combos": combos }),
        a.seed,
    );
    let pool = augmentation_pool(&ck, &manifest, &combos, a.per_combo, a.seed)?;
    write_pool(&pool, ck.nets.n_c, ck.nets.n_m, &a.out)?;
    desc.finish(&a.out)?;
    println!("wrote {} synthetic patches to {}", pool.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&resolve_input(&a.checkpoint))?;
    let manifest = load_dataset(&a.manifest)?;
    let split: Split = a.split.parse()?;
    if (ck.nets.n_c, ck.nets.n_m) != (manifest.n_c, manifest.n_m) {
        return Err(refuse(format!(
            "checkpoint has {}x{} classes, manifest {}x{}",
            ck.nets.n_c, ck.nets.n_m, manifest.n_c, manifest.n_m
        )));
    }
    prepare_file(&a.report, a.force)?;
    let out_dir = a
        .report
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    if let Some(d) = &a.roc_dir {
        fs::create_dir_all(d)?;
    }
    let opts = EvalOptions {
        patches_per_frame: a.patches,
        seed: a.seed,
        aggregation: match a.aggregation {
            AggregationArg::Vote => Aggregation::VoteFraction,
            AggregationArg::Mean => Aggregation::Mean,
        },
        workers: a.workers.max(1),
    };
    let desc = RunDescriptor::start(
        "eval",
        json!({
            "checkpoint": a.checkpoint,
            "kind": ck.kind,
            "split": split,
            "patches": a.patches,
            "aggregation": opts.aggregation,
            "hter_threshold": format!("{:?}", a.hter_threshold).to_lowercase(),
        }),
        a.seed,
    );

    let scores = score_split(&ck, &manifest, split, &opts)?;
    let dev = match a.hter_threshold {
        ThresholdSource::Test => None,
        ThresholdSource::Train if split == Split::Train => None,
        ThresholdSource::Train => match score_split(&ck, &manifest, Split::Train, &opts) {
            Ok(d) => Some(d),
            Err(e) => {
                warn!("no train-split threshold ({e}); using the evaluated split's EER threshold");
                None
            }
        },
    };
    let report = MetricsReport::build(&scores, dev.as_deref())?;
    write_json(&report, &a.report)?;
    let mut lines = String::new();
    for s in &scores {
        lines.push_str(&serde_json::to_string(s)?);
        lines.push('\n');
    }
    fs::write(a.report.with_extension("scores.jsonl"), lines)?;

    let mut groups = Map::new();
    for (g, name) in GROUPINGS {
        let n_m = (g == GroupBy::Medium).then_some(manifest.n_m);
        let grouped = grouped_roc(&scores, g, n_m)?;
        if let Some(d) = &a.roc_dir {
            let curves: Vec<&[RocPoint]> = grouped.reports.iter().map(|r| r.report.roc_points.as_slice()).collect();
            if !curves.is_empty() {
                plot::render_roc(&curves, &d.join(format!("roc_by_{name}.png")))?;
            }
        }
        groups.insert(name.into(), serde_json::to_value(grouped)?);
    }
    write_json(&groups, &a.report.with_extension("groups.json"))?;
    if let Some(d) = &a.roc_dir {
        plot::render_roc(&[&report.roc_points], &d.join("roc.png"))?;
    }

    if ck.kind != CheckpointKind::Gopad && !a.no_confusion {
        let conf = confusion_matrices(&ck, &manifest, split, &opts)?;
        write_json(&conf, &a.report.with_extension("confusion.json"))?;
        if let Some(d) = &a.roc_dir {
            plot::render_heatmap(&conf.sensor, &d.join("confusion_sensor.png"))?;
            plot::render_heatmap(&conf.medium, &d.join("confusion_medium.png"))?;
        }
        println!(
            "rank-1 accuracy: sensor {:.1}%, medium {:.1}%",
            conf.sensor_accuracy, conf.medium_accuracy
        );
    }
    desc.finish(&out_dir)?;
    println!(
        "{} videos: AUC {:.2}  EER {:.2}  HTER {:.2}  -> {}",
        scores.len(),
        report.auc,
        report.eer,
        report.hter,
        a.report.display()
    );
    Ok(())
}

fn viz_prototypes(a: &VizArgs) -> Result<()> {
    let ck = Checkpoint::load(&resolve_input(&a.checkpoint))?;
    let bank = ck
        .bank
        .as_ref()
        .ok_or_else(|| refuse("checkpoint has no noise prototypes (train gan without an ablation)"))?;
    prepare_out(&a.out, a.force)?;
    let desc = RunDescriptor::start("viz-prototypes", json!({ "checkpoint": a.checkpoint }), ck.config.seed);
    for i in 0..bank.n_c {
        let p = bank.sensor_plane(i);
        plot::render_plane(&p, &a.out.join(format!("sensor_{i}.png")))?;
        plot::render_plane(&log_power_spectrum(&p)?, &a.out.join(format!("sensor_{i}_spectrum.png")))?;
    }
    for i in 0..bank.n_m {
        let p = bank.medium_plane(i);
        plot::render_plane(&p, &a.out.join(format!("medium_{i}.png")))?;
        plot::render_plane(&log_power_spectrum(&p)?, &a.out.join(format!("medium_{i}_spectrum.png")))?;
    }
    desc.finish(&a.out)?;
    println!("wrote {} prototype maps to {}", 2 * (bank.n_c + bank.n_m), a.out.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let table = ComparisonTable::from_runs(&a.runs)?;
    print!("{}", table.render());
    if let Some(p) = &a.json {
        prepare_file(p, a.force)?;
        fs::write(p, serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}
