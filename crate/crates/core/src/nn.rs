//! Layer primitives with explicit backward passes.
//!
//! A [`Sequential`] stack records every intermediate activation in a
//! [`Trace`] during the forward pass; `backward` replays the stack in reverse,
//! writing parameter gradients into a [`Grads`] buffer when one is supplied.
//! Passing `None` freezes the stack: no parameter gradient is produced, only the
//! gradient with respect to the input.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GoasError, Result};
use crate::tensor::{matmul, Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if v > T::zero() {
                    v
                } else {
                    v * T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(LEAKY_SLOPE)
                }
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in·k·k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DepthwiseConv2d<T> {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[channels, k·k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct InstanceNorm<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Depthwise(DepthwiseConv2d<T>),
    Linear(Linear<T>),
    InstanceNorm(InstanceNorm<T>),
    Act(Activation),
    /// 2×2 max pooling, stride 2.
    MaxPool2,
    GlobalAvgPool,
    Flatten,
}

fn he_normal<T: Real, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..len).map(|_| T::lit(dist.sample(rng))).collect()
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight: he_normal(out_channels * fan_in, fan_in, rng),
            bias: vec![T::zero(); out_channels],
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.padding),
            conv_out(w, self.kernel, self.stride, self.padding),
        )
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (ho, wo) = self.out_hw(h, w);
        for ci in 0..self.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *o = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (ho, wo) = self.out_hw(h, w);
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(GoasError::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, c
            )));
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(GoasError::shape(format!("input {h}x{w} smaller than kernel")));
        }
        let (ho, wo) = self.out_hw(h, w);
        let ckk = c * self.kernel * self.kernel;
        let mut y = Tensor::zeros([b, self.out_channels, ho, wo]);
        let mut col = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); ckk * ho * wo]
        };
        for i in 0..b {
            let xs = x.sample(i);
            let cols: &[T] = if self.is_pointwise() {
                xs
            } else {
                self.im2col(xs, h, w, &mut col);
                &col
            };
            let ys = y.sample_mut(i);
            matmul(self.out_channels, ckk, ho * wo, &self.weight, false, cols, false, ys, false);
            for (oc, chunk) in ys.chunks_mut(ho * wo).enumerate() {
                let bias = self.bias[oc];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        mut grads: Option<(&mut Vec<T>, &mut Vec<T>)>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [b, c, h, w] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let ckk = c * self.kernel * self.kernel;
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let pointwise = self.is_pointwise();
        let mut col = vec![T::zero(); if pointwise { 0 } else { ckk * ho * wo }];
        let mut dcol = vec![T::zero(); if need_dx && !pointwise { ckk * ho * wo } else { 0 }];
        for i in 0..b {
            let dys = dy.sample(i);
            if let Some((dw, db)) = grads.as_mut() {
                let cols: &[T] = if pointwise {
                    x.sample(i)
                } else {
                    self.im2col(x.sample(i), h, w, &mut col);
                    &col
                };
                matmul(self.out_channels, ho * wo, ckk, dys, false, cols, true, dw, true);
                for (oc, chunk) in dys.chunks(ho * wo).enumerate() {
                    db[oc] += chunk.iter().copied().sum::<T>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                if pointwise {
                    matmul(ckk, self.out_channels, ho * wo, &self.weight, true, dys, false, dx.sample_mut(i), false);
                } else {
                    matmul(ckk, self.out_channels, ho * wo, &self.weight, true, dys, false, &mut dcol, false);
                    self.col2im(&dcol, h, w, dx.sample_mut(i));
                }
            }
        }
        dx
    }
}

impl<T: Real> DepthwiseConv2d<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        DepthwiseConv2d {
            channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight: he_normal(channels * kernel * kernel, kernel * kernel, rng),
            bias: vec![T::zero(); channels],
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.kernel, self.stride, self.padding),
            conv_out(w, self.kernel, self.stride, self.padding),
        )
    }

    /// Visits every (output index, input index, kernel index) triple of one plane.
    fn for_each_tap(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let (ho, wo) = self.out_hw(h, w);
        for oy in 0..ho {
            for ky in 0..k {
                let iy = (oy * s + ky) as isize - p;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for ox in 0..wo {
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - p;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        f(oy * wo + ox, iy as usize * w + ix as usize, ky * k + kx);
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.shape();
        if c != self.channels {
            return Err(GoasError::shape(format!(
                "depthwise conv expects {} channels, got {}",
                self.channels, c
            )));
        }
        let (ho, wo) = self.out_hw(h, w);
        let kk = self.kernel * self.kernel;
        let mut y = Tensor::zeros([b, c, ho, wo]);
        for i in 0..b {
            let xs = x.sample(i);
            let ys = y.sample_mut(i);
            for ch in 0..c {
                let xp = &xs[ch * h * w..(ch + 1) * h * w];
                let yp = &mut ys[ch * ho * wo..(ch + 1) * ho * wo];
                let kern = &self.weight[ch * kk..(ch + 1) * kk];
                yp.fill(self.bias[ch]);
                self.for_each_tap(h, w, |o, inp, t| yp[o] += kern[t] * xp[inp]);
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        mut grads: Option<(&mut Vec<T>, &mut Vec<T>)>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [b, c, h, w] = x.shape();
        let (ho, wo) = (dy.height(), dy.width());
        let kk = self.kernel * self.kernel;
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..b {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            for ch in 0..c {
                let xp = &xs[ch * h * w..(ch + 1) * h * w];
                let dyp = &dys[ch * ho * wo..(ch + 1) * ho * wo];
                if let Some((dw, db)) = grads.as_mut() {
                    let dk = &mut dw[ch * kk..(ch + 1) * kk];
                    self.for_each_tap(h, w, |o, inp, t| dk[t] += dyp[o] * xp[inp]);
                    db[ch] += dyp.iter().copied().sum::<T>();
                }
                if let Some(dx) = dx.as_mut() {
                    let kern = &self.weight[ch * kk..(ch + 1) * kk];
                    let dxp = &mut dx.sample_mut(i)[ch * h * w..(ch + 1) * h * w];
                    self.for_each_tap(h, w, |o, inp, t| dxp[inp] += kern[t] * dyp[o]);
                }
            }
        }
        dx
    }
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Linear {
            in_features,
            out_features,
            weight: he_normal(out_features * in_features, in_features, rng),
            bias: vec![T::zero(); out_features],
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = x.batch();
        if x.sample_len() != self.in_features {
            return Err(GoasError::shape(format!(
                "linear expects {} features, got {}",
                self.in_features,
                x.sample_len()
            )));
        }
        let mut y = Tensor::zeros([b, self.out_features, 1, 1]);
        matmul(b, self.in_features, self.out_features, x.data(), false, &self.weight, true, y.data_mut(), false);
        for row in y.data_mut().chunks_mut(self.out_features) {
            row.iter_mut().zip(&self.bias).for_each(|(v, &bb)| *v += bb);
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<(&mut Vec<T>, &mut Vec<T>)>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let b = x.batch();
        if let Some((dw, db)) = grads {
            matmul(self.out_features, b, self.in_features, dy.data(), true, x.data(), false, dw, true);
            for row in dy.data().chunks(self.out_features) {
                db.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
            }
        }
        need_dx.then(|| {
            let mut dx = Tensor::zeros(x.shape());
            matmul(b, self.out_features, self.in_features, dy.data(), false, &self.weight, false, dx.data_mut(), false);
            dx
        })
    }
}

impl<T: Real> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        }
    }

    fn stats(plane: &[T]) -> (T, T) {
        let n = T::lit(plane.len() as f64);
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        (mean, T::one() / (var + T::lit(NORM_EPS)).sqrt())
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.shape();
        if c != self.channels {
            return Err(GoasError::shape("instance norm channel mismatch"));
        }
        let mut y = x.clone();
        for i in 0..b {
            for (ch, plane) in y.sample_mut(i).chunks_mut(h * w).enumerate() {
                let (mean, inv) = Self::stats(plane);
                for v in plane.iter_mut() {
                    *v = self.gamma[ch] * (*v - mean) * inv + self.beta[ch];
                }
            }
        }
        Ok(y)
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        mut grads: Option<(&mut Vec<T>, &mut Vec<T>)>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let [b, _, h, w] = x.shape();
        let n = h * w;
        let nf = T::lit(n as f64);
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for i in 0..b {
            for ch in 0..self.channels {
                let xp = &x.sample(i)[ch * n..(ch + 1) * n];
                let dyp = &dy.sample(i)[ch * n..(ch + 1) * n];
                let (mean, inv) = Self::stats(xp);
                let xhat: Vec<T> = xp.iter().map(|&v| (v - mean) * inv).collect();
                if let Some((dg, dbeta)) = grads.as_mut() {
                    dg[ch] += dyp.iter().zip(&xhat).map(|(&d, &xh)| d * xh).sum::<T>();
                    dbeta[ch] += dyp.iter().copied().sum::<T>();
                }
                if let Some(dx) = dx.as_mut() {
                    let g = self.gamma[ch];
                    let sum_d: T = dyp.iter().map(|&d| d * g).sum();
                    let sum_dx: T = dyp.iter().zip(&xhat).map(|(&d, &xh)| d * g * xh).sum();
                    let dxp = &mut dx.sample_mut(i)[ch * n..(ch + 1) * n];
                    for j in 0..n {
                        dxp[j] = inv / nf * (nf * dyp[j] * g - sum_d - xhat[j] * sum_dx);
                    }
                }
            }
        }
        dx
    }
}

impl<T: Real> Layer<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::Depthwise(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::InstanceNorm(l) => l.forward(x),
            Layer::Act(a) => Ok(x.map(|v| a.apply(v))),
            Layer::MaxPool2 => {
                let [b, c, h, w] = x.shape();
                if h < 2 || w < 2 {
                    return Err(GoasError::shape(format!("max pool on {h}x{w} input")));
                }
                let (ho, wo) = (h / 2, w / 2);
                let mut y = Tensor::zeros([b, c, ho, wo]);
                for i in 0..b {
                    let xs = x.sample(i);
                    let ys = y.sample_mut(i);
                    for ch in 0..c {
                        let xp = &xs[ch * h * w..];
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let (y0, x0) = (2 * oy, 2 * ox);
                                let m = xp[y0 * w + x0]
                                    .max(xp[y0 * w + x0 + 1])
                                    .max(xp[(y0 + 1) * w + x0])
                                    .max(xp[(y0 + 1) * w + x0 + 1]);
                                ys[(ch * ho + oy) * wo + ox] = m;
                            }
                        }
                    }
                }
                Ok(y)
            }
            Layer::GlobalAvgPool => {
                let [b, c, h, w] = x.shape();
                let n = T::lit((h * w) as f64);
                let data = x
                    .data()
                    .chunks(h * w)
                    .map(|p| p.iter().copied().sum::<T>() / n)
                    .collect();
                Tensor::from_vec([b, c, 1, 1], data)
            }
            Layer::Flatten => x.clone().reshape([x.batch(), x.sample_len(), 1, 1]),
        }
    }

    /// Gradient w.r.t. the input, given input `x`, output `y` and upstream `dy`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        fn pair<T>(g: Option<&mut [Vec<T>]>) -> Option<(&mut Vec<T>, &mut Vec<T>)> {
            g.map(|g| {
                let (w, b) = g.split_at_mut(1);
                (&mut w[0], &mut b[0])
            })
        }
        match self {
            Layer::Conv2d(l) => l.backward(x, dy, pair(grads), need_dx),
            Layer::Depthwise(l) => l.backward(x, dy, pair(grads), need_dx),
            Layer::Linear(l) => l.backward(x, dy, pair(grads), need_dx),
            Layer::InstanceNorm(l) => l.backward(x, dy, pair(grads), need_dx),
            Layer::Act(a) => need_dx.then(|| {
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(dy.data())
                    .map(|((&xv, &yv), &d)| d * a.derivative(xv, yv))
                    .collect();
                Tensor::from_vec(x.shape(), data).expect("same shape")
            }),
            Layer::MaxPool2 => need_dx.then(|| {
                let [b, c, h, w] = x.shape();
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = Tensor::zeros(x.shape());
                for i in 0..b {
                    let xs = x.sample(i);
                    let dys = dy.sample(i);
                    let dxs = dx.sample_mut(i);
                    for ch in 0..c {
                        let base = ch * h * w;
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let cands = [
                                    base + 2 * oy * w + 2 * ox,
                                    base + 2 * oy * w + 2 * ox + 1,
                                    base + (2 * oy + 1) * w + 2 * ox,
                                    base + (2 * oy + 1) * w + 2 * ox + 1,
                                ];
                                let mut best = cands[0];
                                for &cand in &cands[1..] {
                                    if xs[cand] > xs[best] {
                                        best = cand;
                                    }
                                }
                                dxs[best] += dys[(ch * ho + oy) * wo + ox];
                            }
                        }
                    }
                }
                dx
            }),
            Layer::GlobalAvgPool => need_dx.then(|| {
                let [_, _, h, w] = x.shape();
                let n = T::lit((h * w) as f64);
                let data = dy
                    .data()
                    .iter()
                    .flat_map(|&d| std::iter::repeat_n(d / n, h * w))
                    .collect();
                Tensor::from_vec(x.shape(), data).expect("same shape")
            }),
            Layer::Flatten => need_dx.then(|| dy.clone().reshape(x.shape()).expect("same size")),
        }
    }

    pub fn param_slots(&self) -> usize {
        match self {
            Layer::Conv2d(_) | Layer::Depthwise(_) | Layer::Linear(_) | Layer::InstanceNorm(_) => 2,
            _ => 0,
        }
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        match self {
            Layer::Conv2d(l) => vec![&l.weight, &l.bias],
            Layer::Depthwise(l) => vec![&l.weight, &l.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::InstanceNorm(l) => vec![&l.gamma, &l.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Depthwise(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::InstanceNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => vec![],
        }
    }
}

/// Activations recorded by [`Sequential::forward_trace`]; `acts[0]` is the input.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub acts: Vec<Tensor<T>>,
}

impl<T: Real> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("trace holds the input at least")
    }
}

/// Per-parameter gradient buffers, in [`Sequential::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Real> Grads<T> {
    pub fn zeros_for(shapes: &[usize]) -> Self {
        Grads(shapes.iter().map(|&n| vec![T::zero(); n]).collect())
    }

    pub fn scale(&mut self, s: T) {
        self.0.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn sq_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g.as_f64() * g.as_f64()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|g| *g == T::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"))?;
            acts.push(next);
        }
        Ok(Trace { acts })
    }

    /// Backpropagates `dy` through the stack. Parameter gradients are
    /// accumulated into `grads` (one buffer per parameter, in [`Self::params`]
    /// order) when given; the input gradient is returned when
    /// `need_dx` is set.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        dy: Tensor<T>,
        mut grads: Option<&mut [Vec<T>]>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let offsets = self.slot_offsets();
        let mut cur = dy;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let want_dx = need_dx || idx > 0;
            if grads.is_none() && !want_dx {
                break;
            }
            let slots = layer.param_slots();
            let g = grads
                .as_deref_mut()
                .filter(|_| slots > 0)
                .map(|g| &mut g[offsets[idx]..offsets[idx] + slots]);
            {
                let d = layer.backward(&trace.acts[idx], &trace.acts[idx + 1], &cur, g, want_dx)?;
                cur = d
            }
        }
        need_dx.then_some(cur)
    }

    fn slot_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.param_slots();
        }
        offsets
    }

    pub fn params(&self) -> Vec<&Vec<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads::zeros_for(&self.param_shapes())
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Sequential {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv2d(v) => Layer::Conv2d(Conv2d {
                        in_channels: v.in_channels,
                        out_channels: v.out_channels,
                        kernel: v.kernel,
                        stride: v.stride,
                        padding: v.padding,
                        weight: c(&v.weight),
                        bias: c(&v.bias),
                    }),
                    Layer::Depthwise(v) => Layer::Depthwise(DepthwiseConv2d {
                        channels: v.channels,
                        kernel: v.kernel,
                        stride: v.stride,
                        padding: v.padding,
                        weight: c(&v.weight),
                        bias: c(&v.bias),
                    }),
                    Layer::Linear(v) => Layer::Linear(Linear {
                        in_features: v.in_features,
                        out_features: v.out_features,
                        weight: c(&v.weight),
                        bias: c(&v.bias),
                    }),
                    Layer::InstanceNorm(v) => Layer::InstanceNorm(InstanceNorm {
                        channels: v.channels,
                        gamma: c(&v.gamma),
                        beta: c(&v.beta),
                    }),
                    Layer::Act(a) => Layer::Act(*a),
                    Layer::MaxPool2 => Layer::MaxPool2,
                    Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                    Layer::Flatten => Layer::Flatten,
                })
                .collect(),
        }
    }
}

/// Row-wise softmax of a `[B, K, 1, 1]` matrix.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.sample_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    out
}

/// Maps a gradient w.r.t. softmax probabilities back to the logits.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, dprobs: &Tensor<T>) -> Tensor<T> {
    let k = probs.sample_len();
    let mut out = Tensor::zeros(probs.shape());
    for ((p, d), o) in probs
        .data()
        .chunks(k)
        .zip(dprobs.data().chunks(k))
        .zip(out.data_mut().chunks_mut(k))
    {
        let dot: T = p.iter().zip(d).map(|(&a, &b)| a * b).sum();
        for j in 0..k {
            o[j] = p[j] * (d[j] - dot);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adaptive moment estimation over a fixed list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Adam {
            config,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Vec<T>>, grads: &Grads<T>) {
        assert_eq!(params.len(), grads.0.len(), "parameter/gradient slot mismatch");
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = T::lit(c.lr * bc2.sqrt() / bc1);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let eps = T::lit(c.eps * bc2.sqrt());
        let wd = T::lit(c.weight_decay);
        for (slot, p) in params.into_iter().enumerate() {
            let g = &grads.0[slot];
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for j in 0..p.len() {
                let gj = g[j] + wd * p[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                p[j] -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}
