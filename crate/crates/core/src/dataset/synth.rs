//! Procedural stand-in for a captured live/spoof video corpus.
//!
//! Every frame is `clip(texture + a·sensor[s] + a·medium[m], 0, 1)`: a smooth
//! scene (soft blobs over a gradient) plus ground-truth noise. Sensor patterns
//! are band-passed white noise, each sensor owning its own orientation sector
//! of the high-frequency annulus. Medium patterns are pairs of beating cosine
//! gratings at mid frequencies, with integer cycle counts per `period` pixels
//! so that any `period`-sized crop has the same power spectrum.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::{frame_path, DatasetManifest, Split, VideoRecord, MANIFEST_FILE};
use crate::error::{GoasError, Result};
pub use crate::spectrum::Plane;
use crate::spectrum::{bin_frequency, fft2};

pub const DEFAULT_AMPLITUDE: f64 = 0.08;

/// Sensor noise occupies radii in this band (cycles/pixel).
const SENSOR_BAND: (f64, f64) = (0.25, 0.48);
/// Nominal radius of medium gratings (cycles/pixel).
const MEDIUM_RADIUS: f64 = 0.14;
const PATTERN_RMS: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticNoiseSpec {
    pub per_sensor_patterns: Vec<Plane>,
    /// Index 0 is the live (blank) medium and must be all zero.
    pub per_medium_patterns: Vec<Plane>,
    pub amplitude: f64,
    pub seed: u64,
}

impl SyntheticNoiseSpec {
    /// Builds seeded ground-truth patterns for square `frame_size` frames.
    /// `frame_size` must be a multiple of `period`.
    pub fn procedural(
        n_c: usize,
        n_m: usize,
        frame_size: usize,
        period: usize,
        amplitude: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_c == 0 || n_m == 0 {
            return Err(GoasError::invalid("need at least one sensor and one medium"));
        }
        if period < 8 || !frame_size.is_multiple_of(period) {
            return Err(GoasError::invalid(format!(
                "frame size {frame_size} must be a multiple of the pattern period {period} (>= 8)"
            )));
        }
        let sensors = (0..n_c)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(100 + s as u64);
                sensor_pattern(s, n_c, frame_size, &mut rng)
            })
            .collect();
        let freqs = medium_frequencies(n_m, period);
        let mut media = vec![Plane::zeros(frame_size, frame_size)];
        for &(kx, ky) in &freqs {
            media.push(grating_pair(kx, ky, frame_size, period));
        }
        let spec = SyntheticNoiseSpec {
            per_sensor_patterns: sensors,
            per_medium_patterns: media,
            amplitude,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn n_c(&self) -> usize {
        self.per_sensor_patterns.len()
    }

    pub fn n_m(&self) -> usize {
        self.per_medium_patterns.len()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        let p = &self.per_medium_patterns[0];
        (p.height, p.width)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.amplitude) {
            return Err(GoasError::invalid(format!(
                "amplitude {} outside [0, 0.5]",
                self.amplitude
            )));
        }
        let first = self
            .per_medium_patterns
            .first()
            .ok_or_else(|| GoasError::invalid("no medium patterns"))?;
        if self.per_sensor_patterns.is_empty() {
            return Err(GoasError::invalid("no sensor patterns"));
        }
        if !first.is_zero() {
            return Err(GoasError::invalid("live medium pattern (index 0) must be zero"));
        }
        let (h, w) = (first.height, first.width);
        for p in self.per_sensor_patterns.iter().chain(&self.per_medium_patterns) {
            if (p.height, p.width) != (h, w) {
                return Err(GoasError::shape("all patterns must share the frame size"));
            }
            if !p.all_finite() || p.mean().abs() > 1e-9 {
                return Err(GoasError::invalid("patterns must be finite and zero-mean"));
            }
        }
        Ok(())
    }
}

/// Integer grating frequencies `(kx, ky)` (cycles per `period`) of mediums `1..n_m`.
pub fn medium_frequencies(n_m: usize, period: usize) -> Vec<(i64, i64)> {
    let spoof = n_m.saturating_sub(1);
    let mut taken: Vec<(i64, i64)> = Vec::new();
    let mut out = Vec::with_capacity(spoof);
    for j in 0..spoof {
        let angle = j as f64 * PI / spoof as f64;
        let mut radius = MEDIUM_RADIUS * period as f64;
        loop {
            let k = (
                (radius * angle.cos()).round() as i64,
                (radius * angle.sin()).round() as i64,
            );
            let partner = (k.0 + 1, k.1);
            let clash = |f: (i64, i64)| taken.iter().any(|&t| t == f || t == (-f.0, -f.1));
            if k != (0, 0) && !clash(k) && !clash(partner) {
                taken.push(k);
                taken.push(partner);
                out.push(k);
                break;
            }
            radius += 1.0;
        }
    }
    out
}

fn grating_pair(kx: i64, ky: i64, size: usize, period: usize) -> Plane {
    let p = period as f64;
    let mut plane = Plane::from_fn(size, size, |y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let a = 2.0 * PI * (kx as f64 * xf + ky as f64 * yf) / p;
        let b = 2.0 * PI * ((kx + 1) as f64 * xf + ky as f64 * yf) / p;
        a.cos() + 0.6 * b.cos()
    });
    normalize(&mut plane);
    plane
}

fn sensor_pattern(s: usize, n_c: usize, size: usize, rng: &mut ChaCha8Rng) -> Plane {
    let mut buf: Vec<Complex64> = (0..size * size)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    fft2(&mut buf, size, size, false);
    let centre = (s as f64 + 0.5) * PI / n_c as f64;
    let half_width = PI / (2.0 * n_c as f64);
    for ky in 0..size {
        let fy = bin_frequency(ky, size);
        for kx in 0..size {
            let fx = bin_frequency(kx, size);
            let r = (fx * fx + fy * fy).sqrt();
            let angle = fy.atan2(fx).rem_euclid(PI);
            let mut d = (angle - centre).abs();
            d = d.min(PI - d);
            let keep = r >= SENSOR_BAND.0 && r <= SENSOR_BAND.1 && d <= half_width;
            if !keep {
                buf[ky * size + kx] = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft2(&mut buf, size, size, true);
    let mut plane = Plane {
        height: size,
        width: size,
        data: buf.iter().map(|c| c.re).collect(),
    };
    normalize(&mut plane);
    plane
}

fn normalize(p: &mut Plane) {
    let mean = p.mean();
    p.data.iter_mut().for_each(|v| *v -= mean);
    let rms = p.rms();
    if rms > 0.0 {
        p.data.iter_mut().for_each(|v| *v *= PATTERN_RMS / rms);
    }
    // Re-centre after scaling to stay zero-mean in floating point.
    let mean = p.mean();
    p.data.iter_mut().for_each(|v| *v -= mean);
}

/// Seeded scene for one frame: soft elliptical blobs drifting over a colour
/// gradient. Returns R, G, B planes with values inside `[0.2, 0.8]`.
pub fn base_texture(seed: u64, video_index: usize, frame_index: usize, size: usize) -> [Plane; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47_0e5e);
    rng.set_stream(1_000 + video_index as u64);
    let colour = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> [f64; 3] {
        [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
    };
    let c0 = colour(&mut rng, 0.3, 0.7);
    let c1 = colour(&mut rng, 0.3, 0.7);
    let dir: f64 = rng.random_range(0.0..2.0 * PI);
    struct Blob {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        rot: f64,
        colour: [f64; 3],
    }
    let sz = size as f64;
    let n_blobs = rng.random_range(2..=4);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let vy: f64 = rng.random_range(-1.5..1.5);
            let vx: f64 = rng.random_range(-1.5..1.5);
            let cy: f64 = rng.random_range(0.2..0.8) * sz;
            let cx: f64 = rng.random_range(0.2..0.8) * sz;
            Blob {
                cy: cy + vy * frame_index as f64,
                cx: cx + vx * frame_index as f64,
                ry: rng.random_range(0.08..0.22) * sz,
                rx: rng.random_range(0.08..0.22) * sz,
                rot: rng.random_range(0.0..PI),
                colour: colour(&mut rng, 0.2, 0.8),
            }
        })
        .collect();
    let edge = 0.04 * sz;
    let mut planes = [
        Plane::zeros(size, size),
        Plane::zeros(size, size),
        Plane::zeros(size, size),
    ];
    let (cd, sd) = (dir.cos(), dir.sin());
    for y in 0..size {
        for x in 0..size {
            let (yf, xf) = (y as f64 - sz / 2.0, x as f64 - sz / 2.0);
            let t = (0.5 + (xf * cd + yf * sd) / (sz * 1.5)).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for b in &blobs {
                let (dy, dx) = (y as f64 - b.cy, x as f64 - b.cx);
                let u = dx * b.rot.cos() + dy * b.rot.sin();
                let v = -dx * b.rot.sin() + dy * b.rot.cos();
                let d = ((u / b.rx).powi(2) + (v / b.ry).powi(2)).sqrt();
                let alpha = 0.9 / (1.0 + (-(1.0 - d) * b.rx.min(b.ry) / edge).exp());
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - alpha) + b.colour[c] * alpha;
                }
            }
            for c in 0..3 {
                planes[c].data[y * size + x] = px[c];
            }
        }
    }
    planes
}

/// Videos to generate for every (sensor, medium) combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coverage {
    pub n_c: usize,
    pub n_m: usize,
    videos: Vec<usize>,
}

impl Coverage {
    pub fn uniform(n_c: usize, n_m: usize, per_combination: usize) -> Self {
        Coverage {
            n_c,
            n_m,
            videos: vec![per_combination; n_c * n_m],
        }
    }

    /// Uniform count on combinations where `include(sensor, medium)` holds, zero elsewhere.
    pub fn masked(
        n_c: usize,
        n_m: usize,
        per_combination: usize,
        include: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let mut c = Self::uniform(n_c, n_m, 0);
        for s in 0..n_c {
            for m in 0..n_m {
                if include(s, m) {
                    c.videos[s * n_m + m] = per_combination;
                }
            }
        }
        c
    }

    pub fn count(&self, sensor: usize, medium: usize) -> usize {
        self.videos[sensor * self.n_m + medium]
    }

    pub fn total(&self) -> usize {
        self.videos.iter().sum()
    }
}

/// Object/background vocabulary and the train partition used when labelling
/// generated videos. Train videos draw from the first `train_objects` objects
/// and first `train_backgrounds` backgrounds; test videos from the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthLayout {
    pub n_objects: u32,
    pub n_backgrounds: u32,
    pub train_objects: u32,
    pub train_backgrounds: u32,
}

impl Default for SynthLayout {
    fn default() -> Self {
        SynthLayout {
            n_objects: 24,
            n_backgrounds: 7,
            train_objects: 13,
            train_backgrounds: 2,
        }
    }
}

impl SynthLayout {
    fn validate(&self) -> Result<()> {
        if self.train_objects == 0
            || self.train_backgrounds == 0
            || self.train_objects >= self.n_objects
            || self.train_backgrounds >= self.n_backgrounds
        {
            return Err(GoasError::invalid(
                "layout needs non-empty train and test object/background ranges",
            ));
        }
        Ok(())
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `frames_per_video` PNG frames per video under `out_dir/videos/<id>/`
/// and the manifest at `out_dir/manifest.jsonl`.
///
/// Within each combination, videos alternate train/test starting with train.
pub fn generate_synthetic_dataset(
    spec: &SyntheticNoiseSpec,
    coverage: &Coverage,
    frames_per_video: usize,
    layout: SynthLayout,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    layout.validate()?;
    if coverage.n_c != spec.n_c() || coverage.n_m != spec.n_m() {
        return Err(GoasError::invalid(format!(
            "coverage is {}x{} but the noise spec has {} sensors and {} mediums",
            coverage.n_c,
            coverage.n_m,
            spec.n_c(),
            spec.n_m()
        )));
    }
    if coverage.total() == 0 {
        return Err(GoasError::invalid("no sensor/medium combinations requested"));
    }
    if frames_per_video == 0 {
        return Err(GoasError::invalid("frames_per_video must be positive"));
    }
    let (h, w) = spec.frame_size();
    fs::create_dir_all(out_dir).map_err(|e| GoasError::io(out_dir, e))?;

    let mut labels = ChaCha8Rng::seed_from_u64(spec.seed);
    labels.set_stream(7);
    let mut manifest = DatasetManifest::new(spec.n_c(), spec.n_m());
    manifest.metadata.insert("generator".into(), "procedural".into());
    manifest.metadata.insert("amplitude".into(), spec.amplitude.to_string());
    manifest.metadata.insert("seed".into(), spec.seed.to_string());
    manifest.metadata.insert("frame_size".into(), h.to_string());

    let mut video_index = 0usize;
    let mut rgb = vec![0u8; h * w * 3];
    for s in 0..spec.n_c() {
        for m in 0..spec.n_m() {
            for k in 0..coverage.count(s, m) {
                let split = if k % 2 == 0 { Split::Train } else { Split::Test };
                let (object_id, background_id) = match split {
                    Split::Train => (
                        labels.random_range(0..layout.train_objects),
                        labels.random_range(0..layout.train_backgrounds),
                    ),
                    Split::Test => (
                        labels.random_range(layout.train_objects..layout.n_objects),
                        labels.random_range(layout.train_backgrounds..layout.n_backgrounds),
                    ),
                };
                let id = format!("s{s}_m{m}_v{k:03}");
                let dir = out_dir.join("videos").join(&id);
                fs::create_dir_all(&dir).map_err(|e| GoasError::io(&dir, e))?;
                let sensor = &spec.per_sensor_patterns[s].data;
                let medium = &spec.per_medium_patterns[m].data;
                for f in 0..frames_per_video {
                    let tex = base_texture(spec.seed, video_index, f, h);
                    for i in 0..h * w {
                        let noise = spec.amplitude * (sensor[i] + medium[i]);
                        for c in 0..3 {
                            rgb[i * 3 + c] = to_u8(tex[c].data[i] + noise);
                        }
                    }
                    let path = frame_path(&dir, f);
                    image::save_buffer_with_format(
                        &path,
                        &rgb,
                        w as u32,
                        h as u32,
                        image::ExtendedColorType::Rgb8,
                        image::ImageFormat::Png,
                    )
                    .map_err(|e| GoasError::Image {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                }
                manifest.records.push(VideoRecord {
                    id,
                    path: dir,
                    sensor_id: s,
                    medium_id: m,
                    object_id,
                    background_id,
                    split,
                });
                video_index += 1;
            }
        }
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
