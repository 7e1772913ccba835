//! Real 2-D maps and FFT helpers shared by pattern synthesis and prototype analysis.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{GoasError, Result};

/// Row-major `height × width` real map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Plane {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(GoasError::shape(format!(
                "{} values for a {height}x{width} plane",
                data.len()
            )));
        }
        Ok(Plane { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Plane { height, width, data }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len().max(1) as f64).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `size × size` window with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, size: usize) -> Result<Plane> {
        if y + size > self.height || x + size > self.width {
            return Err(GoasError::shape(format!(
                "crop {size}x{size} at ({y},{x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Plane::from_fn(size, size, |dy, dx| self.at(y + dy, x + dx)))
    }

    /// Cyclic shift by `(dy, dx)`.
    pub fn roll(&self, dy: usize, dx: usize) -> Plane {
        let (h, w) = (self.height, self.width);
        Plane::from_fn(h, w, |y, x| self.at((y + h - dy % h) % h, (x + w - dx % w) % w))
    }

    pub fn negated(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }
}

/// In-place 2-D DFT (unnormalized in both directions).
pub(crate) fn fft2(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in buf.chunks_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
}

/// Signed frequency (cycles/pixel) of DFT bin `k` out of `n`.
pub(crate) fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    // The Nyquist bin of an even length is reported as -0.5.
    if n.is_multiple_of(2) && k == n / 2 {
        -0.5
    } else {
        signed / n as f64
    }
}
