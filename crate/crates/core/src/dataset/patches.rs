use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, VideoRecord};
use crate::error::{GoasError, Result};
use crate::tensor::Tensor;

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.png"))
}

/// Number of consecutive `frame_%05d.png` files starting at index 0.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&i| frame_path(dir, i).is_file()).count()
}

/// Decoded 8-bit RGB frame, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn load(path: &Path) -> Result<Frame> {
        if !path.is_file() {
            return Err(GoasError::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)
            .map_err(|e| GoasError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        Ok(Frame {
            width: img.width() as usize,
            height: img.height() as usize,
            rgb: img.into_raw(),
        })
    }

    /// Copies the `size × size` window at `(x, y)` into `out` as planar RGB in `[0, 1]`.
    pub fn write_patch(&self, x: usize, y: usize, size: usize, out: &mut [f32]) {
        assert!(x + size <= self.width && y + size <= self.height, "crop outside frame");
        let plane = size * size;
        for dy in 0..size {
            let row = (y + dy) * self.width;
            for dx in 0..size {
                let src = (row + x + dx) * 3;
                for c in 0..3 {
                    out[c * plane + dy * size + dx] = self.rgb[src + c] as f32 / 255.0;
                }
            }
        }
    }
}

/// Uniform top-left corners of `count` crops fully inside a `width × height` frame.
pub fn crop_origins<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    size: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > width || size > height {
        return Err(GoasError::shape(format!(
            "patch size {size} does not fit a {width}x{height} frame"
        )));
    }
    Ok((0..count)
        .map(|_| (rng.random_range(0..=width - size), rng.random_range(0..=height - size)))
        .collect())
}

pub fn onehot(index: usize, classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; classes];
    v[index] = 1.0;
    v
}

/// Fixed-size patches with their conditioning label vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    /// `[B, 3, S, S]`, values in `[0, 1]`.
    pub images: Tensor<f32>,
    /// `[B, n_c]`
    pub sensor_onehot: Tensor<f32>,
    /// `[B, n_m]`
    pub medium_onehot: Tensor<f32>,
    pub source_video_ids: Vec<String>,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_size(&self) -> usize {
        self.images.height()
    }

    pub fn sensor_ids(&self) -> Vec<usize> {
        (0..self.len()).map(|b| argmax(self.sensor_onehot.row(b))).collect()
    }

    pub fn medium_ids(&self) -> Vec<usize> {
        (0..self.len()).map(|b| argmax(self.medium_onehot.row(b))).collect()
    }

    pub fn labelled(
        images: Tensor<f32>,
        sensors: &[usize],
        mediums: &[usize],
        n_c: usize,
        n_m: usize,
        ids: Vec<String>,
    ) -> Result<Self> {
        let b = images.batch();
        if sensors.len() != b || mediums.len() != b || ids.len() != b {
            return Err(GoasError::shape("label count differs from batch size"));
        }
        if sensors.iter().any(|&s| s >= n_c) || mediums.iter().any(|&m| m >= n_m) {
            return Err(GoasError::invalid("label index out of range"));
        }
        let sensor_onehot = Tensor::matrix(b, n_c, sensors.iter().flat_map(|&s| onehot(s, n_c)).collect())?;
        let medium_onehot = Tensor::matrix(b, n_m, mediums.iter().flat_map(|&m| onehot(m, n_m)).collect())?;
        Ok(PatchBatch {
            images,
            sensor_onehot,
            medium_onehot,
            source_video_ids: ids,
        })
    }

    pub fn gather(&self, indices: &[usize]) -> PatchBatch {
        PatchBatch {
            images: self.images.gather(indices),
            sensor_onehot: self.sensor_onehot.gather(indices),
            medium_onehot: self.medium_onehot.gather(indices),
            source_video_ids: indices.iter().map(|&i| self.source_video_ids[i].clone()).collect(),
        }
    }

    pub fn concat(parts: &[&PatchBatch]) -> Result<PatchBatch> {
        let nonempty: Vec<&PatchBatch> = parts.iter().copied().filter(|p| !p.is_empty()).collect();
        if nonempty.is_empty() {
            return parts
                .first()
                .map(|p| (*p).clone())
                .ok_or_else(|| GoasError::shape("nothing to concatenate"));
        }
        Ok(PatchBatch {
            images: Tensor::concat_batch(&nonempty.iter().map(|p| &p.images).collect::<Vec<_>>())?,
            sensor_onehot: Tensor::concat_batch(&nonempty.iter().map(|p| &p.sensor_onehot).collect::<Vec<_>>())?,
            medium_onehot: Tensor::concat_batch(&nonempty.iter().map(|p| &p.medium_onehot).collect::<Vec<_>>())?,
            source_video_ids: nonempty.iter().flat_map(|p| p.source_video_ids.clone()).collect(),
        })
    }
}

/// Crops `count` random `size × size` patches from one frame of `record`.
/// Corners are uniform under a ChaCha8 generator seeded with `seed`.
pub fn sample_patches(
    manifest: &DatasetManifest,
    record: &VideoRecord,
    frame_index: usize,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<(PatchBatch, Vec<(usize, usize)>)> {
    let frame = Frame::load(&frame_path(&record.path, frame_index))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origins = crop_origins(frame.width, frame.height, size, count, &mut rng)?;
    let mut images = Tensor::zeros([count, 3, size, size]);
    for (b, &(x, y)) in origins.iter().enumerate() {
        frame.write_patch(x, y, size, images.sample_mut(b));
    }
    let batch = PatchBatch::labelled(
        images,
        &vec![record.sensor_id; count],
        &vec![record.medium_id; count],
        manifest.n_c,
        manifest.n_m,
        vec![record.id.clone(); count],
    )?;
    Ok((batch, origins))
}

/// Location of one patch inside a [`FrameStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRef {
    pub record: usize,
    pub frame: usize,
    pub x: usize,
    pub y: usize,
}

/// All frames of a set of records, decoded once and held in memory.
#[derive(Clone, Debug)]
pub struct FrameStore {
    pub n_c: usize,
    pub n_m: usize,
    pub records: Vec<VideoRecord>,
    frames: Vec<Vec<Frame>>,
}

impl FrameStore {
    pub fn load(manifest: &DatasetManifest, keep: impl Fn(&VideoRecord) -> bool) -> Result<Self> {
        let records: Vec<VideoRecord> = manifest.records.iter().filter(|r| keep(r)).cloned().collect();
        let mut frames = Vec::with_capacity(records.len());
        for r in &records {
            let n = count_frames(&r.path);
            if n == 0 {
                return Err(GoasError::invalid(format!("video `{}` has no frames", r.id)));
            }
            frames.push((0..n).map(|i| Frame::load(&frame_path(&r.path, i))).collect::<Result<Vec<_>>>()?);
        }
        Ok(FrameStore {
            n_c: manifest.n_c,
            n_m: manifest.n_m,
            records,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frames(&self, record: usize) -> &[Frame] {
        &self.frames[record]
    }

    /// Indices of records matching `pred`.
    pub fn indices(&self, pred: impl Fn(&VideoRecord) -> bool) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| pred(&self.records[i])).collect()
    }

    pub fn min_frame_side(&self) -> usize {
        self.frames
            .iter()
            .flatten()
            .map(|f| f.width.min(f.height))
            .min()
            .unwrap_or(0)
    }

    /// Draws a record from `pool`, a frame, and a corner, uniformly.
    pub fn random_ref<R: Rng + ?Sized>(&self, pool: &[usize], size: usize, rng: &mut R) -> Result<PatchRef> {
        if pool.is_empty() {
            return Err(GoasError::invalid("empty record pool"));
        }
        let record = pool[rng.random_range(0..pool.len())];
        let frame = rng.random_range(0..self.frames[record].len());
        let f = &self.frames[record][frame];
        let (x, y) = crop_origins(f.width, f.height, size, 1, rng)?[0];
        Ok(PatchRef { record, frame, x, y })
    }

    pub fn materialize(&self, refs: &[PatchRef], size: usize) -> Result<PatchBatch> {
        let mut images = Tensor::zeros([refs.len(), 3, size, size]);
        for (b, r) in refs.iter().enumerate() {
            let f = &self.frames[r.record][r.frame];
            if r.x + size > f.width || r.y + size > f.height {
                return Err(GoasError::shape("patch reference outside frame"));
            }
            f.write_patch(r.x, r.y, size, images.sample_mut(b));
        }
        let recs: Vec<&VideoRecord> = refs.iter().map(|r| &self.records[r.record]).collect();
        PatchBatch::labelled(
            images,
            &recs.iter().map(|r| r.sensor_id).collect::<Vec<_>>(),
            &recs.iter().map(|r| r.medium_id).collect::<Vec<_>>(),
            self.n_c,
            self.n_m,
            recs.iter().map(|r| r.id.clone()).collect(),
        )
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        pool: &[usize],
        count: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<PatchBatch> {
        let refs = (0..count)
            .map(|_| self.random_ref(pool, size, rng))
            .collect::<Result<Vec<_>>>()?;
        self.materialize(&refs, size)
    }
}
