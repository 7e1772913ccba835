//! Learnable image-independent noise prototypes, one per sensor and one per
//! medium, plus power-spectrum tooling for inspecting them.
//!
//! Selection is linear in the bank: `N_c = Σ_i a_c[i]·M_c[i]` and likewise for
//! mediums, so the gradient w.r.t. `M_c[i]` is the upstream gradient scaled
//! by `a_c[i]`.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use crate::error::{GoasError, Result};
use crate::nn::Grads;
use crate::spectrum::{fft2, Plane};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    Zeros,
    Gaussian { std: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Gaussian {
            std: DEFAULT_INIT_STD,
        }
    }
}

impl FromStr for InitScheme {
    type Err = GoasError;

    /// `zeros`, `gaussian`, or `gaussian:<std>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "zeros" => Ok(InitScheme::Zeros),
            None if s == "gaussian" => Ok(InitScheme::default()),
            Some(("gaussian", std)) => {
                let std: f64 = std
                    .parse()
                    .map_err(|_| GoasError::invalid(format!("bad gaussian std `{std}`")))?;
                if !(std.is_finite() && std >= 0.0) {
                    return Err(GoasError::invalid("gaussian std must be finite and >= 0"));
                }
                Ok(InitScheme::Gaussian { std })
            }
            _ => Err(GoasError::invalid(format!("unknown init scheme `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrototypeBank<T> {
    pub n_c: usize,
    pub n_m: usize,
    /// Prototypes are `size × size`.
    pub size: usize,
    /// `[n_c, size, size]`
    pub sensor: Vec<T>,
    /// `[n_m, size, size]`
    pub medium: Vec<T>,
}

/// Prototype maps picked out for one sensor/medium weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedNoise<T> {
    pub size: usize,
    pub sensor: Vec<T>,
    pub medium: Vec<T>,
}

fn is_onehot<T: Real>(w: &[T]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in w.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return None;
            }
            hot = Some(i);
        } else if v != T::zero() {
            return None;
        }
    }
    hot
}

fn mix<T: Real>(protos: &[T], weights: &[T], plane: usize, out: &mut [T]) {
    if let Some(k) = is_onehot(weights) {
        out.copy_from_slice(&protos[k * plane..(k + 1) * plane]);
        return;
    }
    out.fill(T::zero());
    for (i, &a) in weights.iter().enumerate() {
        if a == T::zero() {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(&protos[i * plane..(i + 1) * plane]) {
            *o += a * p;
        }
    }
}

impl<T: Real> NoisePrototypeBank<T> {
    pub fn init(n_c: usize, n_m: usize, size: usize, scheme: InitScheme, seed: u64) -> Result<Self> {
        if n_c == 0 || n_m == 0 || size == 0 {
            return Err(GoasError::invalid("bank dimensions must be at least 1"));
        }
        let plane = size * size;
        let mut bank = NoisePrototypeBank {
            n_c,
            n_m,
            size,
            sensor: vec![T::zero(); n_c * plane],
            medium: vec![T::zero(); n_m * plane],
        };
        if let InitScheme::Gaussian { std } = scheme {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Normal::new(0.0, std).map_err(|e| GoasError::invalid(e.to_string()))?;
            for v in bank.sensor.iter_mut().chain(bank.medium.iter_mut()) {
                *v = T::lit(dist.sample(&mut rng));
            }
        }
        Ok(bank)
    }

    fn plane(&self) -> usize {
        self.size * self.size
    }

    pub fn sensor_prototype(&self, i: usize) -> &[T] {
        &self.sensor[i * self.plane()..(i + 1) * self.plane()]
    }

    pub fn medium_prototype(&self, i: usize) -> &[T] {
        &self.medium[i * self.plane()..(i + 1) * self.plane()]
    }

    fn check_weights(&self, a_c: &[T], a_m: &[T]) -> Result<()> {
        if a_c.len() != self.n_c || a_m.len() != self.n_m {
            return Err(GoasError::shape(format!(
                "weights of length ({}, {}) for a bank with {} sensors and {} mediums",
                a_c.len(),
                a_m.len(),
                self.n_c,
                self.n_m
            )));
        }
        if a_c.iter().chain(a_m).any(|v| !v.is_finite()) {
            return Err(GoasError::invalid("selection weights must be finite"));
        }
        Ok(())
    }

    /// `N_c = Σ a_c[i]·M_c[i]`, `N_m = Σ a_m[i]·M_m[i]`.
    pub fn select(&self, a_c: &[T], a_m: &[T]) -> Result<SelectedNoise<T>> {
        self.check_weights(a_c, a_m)?;
        let plane = self.plane();
        let mut sensor = vec![T::zero(); plane];
        let mut medium = vec![T::zero(); plane];
        mix(&self.sensor, a_c, plane, &mut sensor);
        mix(&self.medium, a_m, plane, &mut medium);
        Ok(SelectedNoise {
            size: self.size,
            sensor,
            medium,
        })
    }

    /// Batched selection: `[B, 2, S, S]` with channels `[N_c, N_m]`.
    pub fn select_batch(&self, a_c: &Tensor<T>, a_m: &Tensor<T>) -> Result<Tensor<T>> {
        let b = a_c.batch();
        if a_m.batch() != b {
            return Err(GoasError::shape("sensor and medium weight batches differ"));
        }
        let plane = self.plane();
        let mut out = Tensor::zeros([b, 2, self.size, self.size]);
        for i in 0..b {
            self.check_weights(a_c.row(i), a_m.row(i))?;
            let s = out.sample_mut(i);
            let (ns, nm) = s.split_at_mut(plane);
            mix(&self.sensor, a_c.row(i), plane, ns);
            mix(&self.medium, a_m.row(i), plane, nm);
        }
        Ok(out)
    }

    /// Accumulates `∂L/∂M` given `∂L/∂[N_c, N_m]` of shape `[B, 2, S, S]`.
    pub fn backward_batch(&self, a_c: &Tensor<T>, a_m: &Tensor<T>, d_noise: &Tensor<T>, grads: &mut Grads<T>) {
        let plane = self.plane();
        for i in 0..d_noise.batch() {
            let (dn_c, dn_m) = d_noise.sample(i).split_at(plane);
            for (k, &a) in a_c.row(i).iter().enumerate() {
                if a != T::zero() {
                    for (g, &d) in grads.0[0][k * plane..(k + 1) * plane].iter_mut().zip(dn_c) {
                        *g += a * d;
                    }
                }
            }
            for (k, &a) in a_m.row(i).iter().enumerate() {
                if a != T::zero() {
                    for (g, &d) in grads.0[1][k * plane..(k + 1) * plane].iter_mut().zip(dn_m) {
                        *g += a * d;
                    }
                }
            }
        }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads::zeros_for(&[self.sensor.len(), self.medium.len()])
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.sensor, &mut self.medium]
    }

    pub fn all_finite(&self) -> bool {
        self.sensor.iter().chain(&self.medium).all(|v| v.is_finite())
    }

    pub fn sensor_plane(&self, i: usize) -> Plane {
        let s = self.size;
        Plane {
            height: s,
            width: s,
            data: self.sensor_prototype(i).iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn medium_plane(&self, i: usize) -> Plane {
        let s = self.size;
        Plane {
            height: s,
            width: s,
            data: self.medium_prototype(i).iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> NoisePrototypeBank<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        NoisePrototypeBank {
            n_c: self.n_c,
            n_m: self.n_m,
            size: self.size,
            sensor: c(&self.sensor),
            medium: c(&self.medium),
        }
    }
}

/// Free-function form of [`NoisePrototypeBank::select`].
pub fn select_prototype<T: Real>(bank: &NoisePrototypeBank<T>, a_c: &[T], a_m: &[T]) -> Result<SelectedNoise<T>> {
    bank.select(a_c, a_m)
}

/// Squared magnitude of the 2-D DFT with the zero-frequency bin moved to
/// `(height / 2, width / 2)`.
pub fn fft_power_spectrum(map: &Plane) -> Result<Plane> {
    if !map.all_finite() {
        return Err(GoasError::invalid("power spectrum of a non-finite map"));
    }
    let (h, w) = (map.height, map.width);
    let mut buf: Vec<Complex64> = map.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, h, w, false);
    let mut out = Plane::zeros(h, w);
    for ky in 0..h {
        for kx in 0..w {
            let (sy, sx) = ((ky + h / 2) % h, (kx + w / 2) % w);
            out.data[sy * w + sx] = buf[ky * w + kx].norm_sqr();
        }
    }
    Ok(out)
}

/// `ln(1 + P)` of the centred power spectrum, for rendering.
pub fn log_power_spectrum(map: &Plane) -> Result<Plane> {
    let mut p = fft_power_spectrum(map)?;
    p.data.iter_mut().for_each(|v| *v = v.ln_1p());
    Ok(p)
}

/// Pearson correlation of the two power spectra, DC bin excluded.
pub fn spectral_correlation(a: &Plane, b: &Plane) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(GoasError::shape("spectral correlation needs equal shapes"));
    }
    let pa = fft_power_spectrum(a)?;
    let pb = fft_power_spectrum(b)?;
    let dc = (a.height / 2) * a.width + a.width / 2;
    let xs: Vec<f64> = pa.data.iter().enumerate().filter(|&(i, _)| i != dc).map(|(_, &v)| v).collect();
    let ys: Vec<f64> = pb.data.iter().enumerate().filter(|&(i, _)| i != dc).map(|(_, &v)| v).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(GoasError::invalid("zero-variance power spectrum"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(N⁴) DFT power, centred.
    fn dft_power_oracle(p: &Plane) -> Plane {
        let (h, w) = (p.height, p.width);
        let mut out = Plane::zeros(h, w);
        for ky in 0..h {
            for kx in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * PI * (ky as f64 * y as f64 / h as f64 + kx as f64 * x as f64 / w as f64);
                        re += p.at(y, x) * ang.cos();
                        im += p.at(y, x) * ang.sin();
                    }
                }
                out.data[((ky + h / 2) % h) * w + (kx + w / 2) % w] = re * re + im * im;
            }
        }
        out
    }

    fn bank() -> NoisePrototypeBank<f64> {
        NoisePrototypeBank::init(5, 3, 4, InitScheme::Gaussian { std: 1.0 }, 9).unwrap()
    }

    #[test]
    fn onehot_selects_exact_prototype() {
        let b = bank();
        let sel = b.select(&[0., 0., 0., 1., 0.], &[0., 1., 0.]).unwrap();
        assert_eq!(sel.sensor, b.sensor_prototype(3));
        assert_eq!(sel.medium, b.medium_prototype(1));
    }

    #[test]
    fn zero_weights_select_zero_map() {
        let sel = bank().select(&[0.0; 5], &[0.0; 3]).unwrap();
        assert!(sel.sensor.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_half_matches_elementwise_oracle() {
        let b = bank();
        let sel = b.select(&[0.5, 0.5, 0., 0., 0.], &[1., 0., 0.]).unwrap();
        for j in 0..16 {
            let want = 0.5 * b.sensor[j] + 0.5 * b.sensor[16 + j];
            assert!((sel.sensor[j] - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn weight_length_mismatch_is_error() {
        assert!(bank().select(&[1.0; 4], &[1.0, 0.0, 0.0]).is_err());
        assert!(bank().select(&[f64::NAN, 0., 0., 0., 0.], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn init_schemes() {
        let z = NoisePrototypeBank::<f32>::init(2, 2, 8, "zeros".parse().unwrap(), 0).unwrap();
        assert!(z.sensor.iter().chain(&z.medium).all(|&v| v == 0.0));
        let g1 = NoisePrototypeBank::<f32>::init(2, 2, 8, InitScheme::default(), 4).unwrap();
        let g2 = NoisePrototypeBank::<f32>::init(2, 2, 8, InitScheme::default(), 4).unwrap();
        assert_eq!(g1, g2);
        assert!("uniform".parse::<InitScheme>().is_err());
        assert_eq!("gaussian:0.5".parse::<InitScheme>().unwrap(), InitScheme::Gaussian { std: 0.5 });
    }

    #[test]
    fn gaussian_init_std_within_band() {
        let b = NoisePrototypeBank::<f64>::init(1, 1, 64, InitScheme::default(), 21).unwrap();
        let v = b.sensor_prototype(0);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.008..=0.012).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn constant_map_puts_all_energy_in_dc() {
        let c = 0.3;
        let p = fft_power_spectrum(&Plane::from_fn(8, 8, |_, _| c)).unwrap();
        let dc = p.at(4, 4);
        assert!((dc - (c * 64.0).powi(2)).abs() < 1e-9);
        let rest: f64 = p.data.iter().sum::<f64>() - dc;
        assert!(rest.abs() < 1e-18);
    }

    #[test]
    fn horizontal_cosine_has_symmetric_peaks_and_matches_direct_dft() {
        let k = 2;
        let map = Plane::from_fn(8, 8, |_, x| (2.0 * PI * k as f64 * x as f64 / 8.0).cos());
        let p = fft_power_spectrum(&map).unwrap();
        let oracle = dft_power_oracle(&map);
        for (a, b) in p.data.iter().zip(&oracle.data) {
            assert!((a - b).abs() < 1e-9);
        }
        // Peaks at centre ± k along the horizontal axis: (N·N/2)² = 32².
        assert!((p.at(4, 4 + k) - 1024.0).abs() < 1e-9);
        assert!((p.at(4, 4 - k) - 1024.0).abs() < 1e-9);
        let total: f64 = p.data.iter().sum();
        assert!((total - 2048.0).abs() < 1e-9);
    }

    #[test]
    fn power_spectrum_point_symmetric_for_real_input() {
        let b = bank();
        let map = Plane::from_fn(8, 8, |y, x| (y as f64 * 1.3).sin() + b.sensor[(x + y) % 16] + x as f64 * 0.1);
        let p = fft_power_spectrum(&map).unwrap();
        for y in 1..8 {
            for x in 1..8 {
                let (my, mx) = (8 - y, 8 - x);
                assert!((p.at(y, x) - p.at(my, mx)).abs() < 1e-9 * (1.0 + p.at(y, x)));
            }
        }
    }

    #[test]
    fn correlation_basics() {
        let a = Plane::from_fn(16, 16, |y, x| ((x * 7 + y * 3) as f64).sin() + (x as f64 * 0.9).cos());
        assert!((spectral_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_correlation(&a, &a.negated()).unwrap() - 1.0).abs() < 1e-12);
        let g1 = Plane::from_fn(16, 16, |_, x| (2.0 * PI * 2.0 * x as f64 / 16.0).cos());
        let g2 = Plane::from_fn(16, 16, |y, _| (2.0 * PI * 5.0 * y as f64 / 16.0).cos());
        assert!(spectral_correlation(&g1, &g2).unwrap() < 0.2);
        assert!(spectral_correlation(&Plane::zeros(16, 16), &g1).is_err());
    }
}
