//! Minimal PNG renderings: ROC curves, confusion heatmaps, noise maps.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::RocPoint;
use crate::error::{GoasError, Result};
use crate::spectrum::Plane;

const SIDE: u32 = 256;
const MARGIN: u32 = 16;
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| GoasError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// ROC curves with the spoof-detection rate `1 − FAR` against the live
/// rejection rate FRR, one colour per curve, on a unit square.
pub fn render_roc(curves: &[&[RocPoint]], path: &Path) -> Result<()> {
    let full = SIDE + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(full, full, Rgb([255, 255, 255]));
    let to_px = |fx: f64, fy: f64| {
        (
            (MARGIN as f64 + fx * SIDE as f64).round() as i64,
            (MARGIN as f64 + (1.0 - fy) * SIDE as f64).round() as i64,
        )
    };
    let axis = Rgb([0, 0, 0]);
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 0.0), axis);
    line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), axis);
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 1.0), Rgb([200, 200, 200]));
    for (k, pts) in curves.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        let mut xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.frr, 1.0 - p.far)).collect();
        xy.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        for w in xy.windows(2) {
            line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), color);
        }
    }
    save(&img, path)
}

/// Square heatmap of a row-normalised matrix: white = 0, dark blue = 1.
pub fn render_heatmap(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    let n = matrix.len().max(1) as u32;
    let cell = (SIDE / n).max(1);
    let mut img = RgbImage::from_pixel(cell * n, cell * n, Rgb([255, 255, 255]));
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let c = Rgb([
                (255.0 * (1.0 - v)) as u8,
                (255.0 * (1.0 - 0.8 * v)) as u8,
                (255.0 * (1.0 - 0.4 * v)) as u8,
            ]);
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(j as u32 * cell + x, i as u32 * cell + y, c);
                }
            }
        }
    }
    save(&img, path)
}

/// Grey-scale rendering of a plane, min-max stretched.
pub fn render_plane(plane: &Plane, path: &Path) -> Result<()> {
    let (lo, hi) = plane
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(plane.width as u32, plane.height as u32);
    for y in 0..plane.height {
        for x in 0..plane.width {
            let g = (255.0 * (plane.at(y, x) - lo) / span).round() as u8;
            img.put_pixel(x as u32, y as u32, Rgb([g, g, g]));
        }
    }
    save(&img, path)
}
