//! Forward/backward definitions of the four networks.
//!
//! * generator: 8 convolutions over `[I, N_c, N_m]`, residual head
//!   `Î = clamp(I + tanh(conv_8(·)), 0, 1)` with the last convolution
//!   zero-initialised so a fresh generator is the identity;
//! * discriminator: 10 convolutions (stride 2 on every second layer) and two
//!   fully connected layers producing two-way softmax probabilities
//!   (class 0 = real spoof image, class 1 = synthesized);
//! * sensor/medium classifier: 11 convolutions with max pooling after the
//!   3rd, 6th and 9th, global average pooling and two independent
//!   two-layer heads;
//! * binary map baseline: a depthwise-separable trunk with three stages and a
//!   sigmoid 1×1 head producing a `[0, 1]` map.
//!
//! All networks take images in `[0, 1]` and shift them to `[-1, 1]` before the
//! first convolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GoasError, Result};
use crate::nn::{softmax, softmax_backward, Activation, Conv2d, DepthwiseConv2d, Grads, InstanceNorm, Layer, Linear, Sequential, Trace};
use crate::tensor::{Real, Tensor};

pub const GEN_CONVS: usize = 8;
pub const DISC_CONVS: usize = 10;
pub const LAB_CONVS: usize = 11;
/// Classifier convolutions (1-based) followed by 2×2 max pooling.
pub const LAB_POOL_AFTER: [usize; 3] = [3, 6, 9];
pub const PAD_STAGES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    None,
    Instance,
}

/// Layer widths and shared layer choices. Serialized with flat dotted keys
/// (`gen.channels`, `pad.map_size`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Output widths of generator convolutions 1..=7 (the 8th outputs RGB).
    #[serde(rename = "gen.channels")]
    pub gen_channels: Vec<usize>,
    #[serde(rename = "disc.channels")]
    pub disc_channels: Vec<usize>,
    #[serde(rename = "disc.hidden")]
    pub disc_hidden: usize,
    #[serde(rename = "lab.channels")]
    pub lab_channels: Vec<usize>,
    #[serde(rename = "lab.hidden")]
    pub lab_hidden: usize,
    /// Stem width followed by the output width of each of the three stages.
    #[serde(rename = "pad.channels")]
    pub pad_channels: Vec<usize>,
    #[serde(rename = "pad.map_size")]
    pub pad_map_size: usize,
    pub activation: Activation,
    pub norm: NormKind,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            gen_channels: vec![32, 32, 64, 64, 32, 32, 16],
            disc_channels: vec![16, 16, 32, 32, 64, 64, 64, 64, 128, 128],
            disc_hidden: 128,
            lab_channels: vec![16, 16, 16, 32, 32, 32, 64, 64, 64, 128, 128],
            lab_hidden: 64,
            pad_channels: vec![16, 32, 32, 32],
            pad_map_size: 32,
            activation: Activation::LeakyRelu,
            norm: NormKind::None,
        }
    }
}

impl ArchConfig {
    /// Widths used by the desk-scale experiments: same depth, fewer kernels.
    pub fn compact() -> Self {
        ArchConfig {
            gen_channels: vec![16, 16, 16, 16, 16, 16, 8],
            disc_channels: vec![8, 8, 16, 16, 16, 16, 32, 32, 32, 32],
            disc_hidden: 32,
            lab_channels: vec![8, 8, 8, 16, 16, 16, 32, 32, 32, 32, 32],
            lab_hidden: 32,
            pad_channels: vec![8, 16, 16, 16],
            pad_map_size: 32,
            ..ArchConfig::default()
        }
    }

    /// Tiny widths (at most 4 channels) for gradient verification on 8×8 inputs.
    pub fn toy() -> Self {
        ArchConfig {
            gen_channels: vec![3, 4, 4, 3, 4, 3, 2],
            disc_channels: vec![2, 3, 3, 4, 2, 3, 4, 2, 3, 2],
            disc_hidden: 4,
            lab_channels: vec![2, 3, 4, 3, 2, 4, 3, 2, 3, 4, 3],
            lab_hidden: 4,
            pad_channels: vec![3, 4, 4, 3],
            pad_map_size: 4,
            ..ArchConfig::default()
        }
    }

    /// The binary-map baseline at three times the kernel counts of `self`;
    /// `self.pad_channels` is the reduced (one-third) variant of it.
    pub fn reference_pad_channels(&self) -> Vec<usize> {
        self.pad_channels.iter().map(|c| c * 3).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: &[usize], n: usize| {
            if v.len() != n || v.contains(&0) {
                Err(GoasError::Config(format!("{name} needs {n} positive widths, got {v:?}")))
            } else {
                Ok(())
            }
        };
        check("gen.channels", &self.gen_channels, GEN_CONVS - 1)?;
        check("disc.channels", &self.disc_channels, DISC_CONVS)?;
        check("lab.channels", &self.lab_channels, LAB_CONVS)?;
        check("pad.channels", &self.pad_channels, PAD_STAGES + 1)?;
        if self.disc_hidden == 0 || self.lab_hidden == 0 || self.pad_map_size == 0 {
            return Err(GoasError::Config("hidden sizes and pad.map_size must be positive".into()));
        }
        if matches!(self.activation, Activation::Tanh | Activation::Sigmoid) {
            return Err(GoasError::Config("activation must be leaky_relu or relu".into()));
        }
        Ok(())
    }
}

fn push_conv_block<T: Real>(
    layers: &mut Vec<Layer<T>>,
    conv: Conv2d<T>,
    arch: &ArchConfig,
) {
    let out = conv.out_channels;
    layers.push(Layer::Conv2d(conv));
    if arch.norm == NormKind::Instance {
        layers.push(Layer::InstanceNorm(InstanceNorm::new(out)));
    }
    layers.push(Layer::Act(arch.activation));
}

fn shift_to_signed<T: Real>(images: &Tensor<T>) -> Tensor<T> {
    images.map(|v| v * T::lit(2.0) - T::one())
}

fn check_images<T: Real>(images: &Tensor<T>, what: &str) -> Result<()> {
    if images.channels() != 3 {
        return Err(GoasError::shape(format!(
            "{what} expects RGB input, got {} channels",
            images.channels()
        )));
    }
    Ok(())
}

/// Shared parameter access for every network.
pub trait Module<T: Real> {
    fn params(&self) -> Vec<&Vec<T>>;
    fn params_mut(&mut self) -> Vec<&mut Vec<T>>;

    fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    fn param_count(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    fn zero_grads(&self) -> Grads<T> {
        Grads::zeros_for(&self.param_shapes())
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Generator input `T = [I, noise...]`: three image channels in `[0, 1]`
/// followed by conditioning channels (`[N_c, N_m]` with prototypes, or one
/// constant map per class in the one-hot-map ablation).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorInput<T> {
    pub t: Tensor<T>,
}

impl<T: Real> GeneratorInput<T> {
    pub fn new(images: &Tensor<T>, noise: &Tensor<T>) -> Result<Self> {
        check_images(images, "generator")?;
        Ok(GeneratorInput {
            t: Tensor::concat_channels(&[images, noise])?,
        })
    }

    /// Ablation input: channel `3 + i` is all ones when sensor `i` is
    /// selected and all zeros otherwise; mediums follow the sensors.
    pub fn onehot_maps(images: &Tensor<T>, a_c: &Tensor<T>, a_m: &Tensor<T>) -> Result<Self> {
        check_images(images, "generator")?;
        let [b, _, h, w] = images.shape();
        if a_c.batch() != b || a_m.batch() != b {
            return Err(GoasError::shape("one-hot batch differs from image batch"));
        }
        let (n_c, n_m) = (a_c.sample_len(), a_m.sample_len());
        let mut maps = Tensor::zeros([b, n_c + n_m, h, w]);
        for i in 0..b {
            let weights: Vec<T> = a_c.row(i).iter().chain(a_m.row(i)).copied().collect();
            for (plane, &wv) in maps.sample_mut(i).chunks_mut(h * w).zip(&weights) {
                plane.fill(wv);
            }
        }
        Self::new(images, &maps)
    }

    pub fn images(&self) -> Tensor<T> {
        self.t.channel_range(0, 3)
    }

    pub fn conditioning_channels(&self) -> usize {
        self.t.channels() - 3
    }
}

#[derive(Clone, Debug)]
pub struct GoGen<T> {
    pub body: Sequential<T>,
    pub conditioning_channels: usize,
}

/// Generator activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GenTrace<T> {
    body: Trace<T>,
    /// `I + tanh(·)` before clamping.
    pre_clamp: Tensor<T>,
    pub output: Tensor<T>,
}

impl<T: Real> GoGen<T> {
    pub fn new(arch: &ArchConfig, conditioning_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut c_in = 3 + conditioning_channels;
        for &c_out in &arch.gen_channels {
            push_conv_block(&mut layers, Conv2d::new(c_in, c_out, 3, 1, rng), arch);
            c_in = c_out;
        }
        let mut last = Conv2d::new(c_in, 3, 3, 1, rng);
        last.weight.fill(T::zero());
        last.bias.fill(T::zero());
        layers.push(Layer::Conv2d(last));
        layers.push(Layer::Act(Activation::Tanh));
        GoGen {
            body: Sequential::new(layers),
            conditioning_channels,
        }
    }

    fn body_input(&self, input: &GeneratorInput<T>) -> Result<Tensor<T>> {
        if input.conditioning_channels() != self.conditioning_channels {
            return Err(GoasError::shape(format!(
                "generator expects {} conditioning channels, got {}",
                self.conditioning_channels,
                input.conditioning_channels()
            )));
        }
        let shifted = shift_to_signed(&input.images());
        let cond = input.t.channel_range(3, input.t.channels());
        Tensor::concat_channels(&[&shifted, &cond])
    }

    pub fn forward(&self, input: &GeneratorInput<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &GeneratorInput<T>) -> Result<GenTrace<T>> {
        let body = self.body.forward_trace(&self.body_input(input)?)?;
        let images = input.images();
        let mut pre_clamp = images;
        for (p, &r) in pre_clamp.data_mut().iter_mut().zip(body.output().data()) {
            *p += r;
        }
        let output = pre_clamp.map(|v| v.max(T::zero()).min(T::one()));
        Ok(GenTrace {
            body,
            pre_clamp,
            output,
        })
    }

    /// Returns `(∂L/∂I, ∂L/∂conditioning)` and accumulates parameter gradients
    /// into `grads` when given.
    pub fn backward(
        &self,
        trace: &GenTrace<T>,
        d_out: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
    ) -> (Tensor<T>, Tensor<T>) {
        let d_pre = Tensor::from_vec(
            d_out.shape(),
            d_out
                .data()
                .iter()
                .zip(trace.pre_clamp.data())
                .map(|(&d, &p)| if p >= T::zero() && p <= T::one() { d } else { T::zero() })
                .collect(),
        )
        .expect("same shape");
        let dx = self
            .body
            .backward(&trace.body, d_pre.clone(), grads, true)
            .expect("input gradient requested");
        let c = dx.channels();
        let mut d_image = dx.channel_range(0, 3).map(|v| v * T::lit(2.0));
        for (a, &b) in d_image.data_mut().iter_mut().zip(d_pre.data()) {
            *a += b;
        }
        (d_image, dx.channel_range(3, c))
    }
}

impl<T: Real> Module<T> for GoGen<T> {
    fn params(&self) -> Vec<&Vec<T>> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.body.params_mut()
    }
}

#[derive(Clone, Debug)]
pub struct GoDisc<T> {
    pub net: Sequential<T>,
    pub patch: usize,
}

#[derive(Clone, Debug)]
pub struct DiscTrace<T> {
    net: Trace<T>,
    pub probs: Tensor<T>,
}

impl<T: Real> GoDisc<T> {
    pub fn new(arch: &ArchConfig, patch: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut c_in = 3;
        let mut side = patch;
        for (i, &c_out) in arch.disc_channels.iter().enumerate() {
            let stride = if i % 2 == 1 { 2 } else { 1 };
            push_conv_block(&mut layers, Conv2d::new(c_in, c_out, 3, stride, rng), arch);
            if stride == 2 {
                side = (side - 1) / 2 + 1;
            }
            c_in = c_out;
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Linear(Linear::new(c_in * side * side, arch.disc_hidden, rng)));
        layers.push(Layer::Act(arch.activation));
        layers.push(Layer::Linear(Linear::new(arch.disc_hidden, 2, rng)));
        GoDisc {
            net: Sequential::new(layers),
            patch,
        }
    }

    fn check(&self, images: &Tensor<T>) -> Result<()> {
        check_images(images, "discriminator")?;
        if images.height() != self.patch || images.width() != self.patch {
            return Err(GoasError::shape(format!(
                "discriminator built for {p}x{p} patches, got {}x{}",
                images.height(),
                images.width(),
                p = self.patch
            )));
        }
        Ok(())
    }

    /// `[B, 2]` probabilities.
    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(images)?;
        Ok(softmax(&self.net.forward(&shift_to_signed(images))?))
    }

    pub fn forward_trace(&self, images: &Tensor<T>) -> Result<DiscTrace<T>> {
        self.check(images)?;
        let net = self.net.forward_trace(&shift_to_signed(images))?;
        let probs = softmax(net.output());
        Ok(DiscTrace { net, probs })
    }

    /// `∂L/∂images` given `∂L/∂probs`; parameter gradients go to `grads` when given.
    pub fn backward(
        &self,
        trace: &DiscTrace<T>,
        d_probs: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let d_logits = softmax_backward(&trace.probs, d_probs);
        self.net
            .backward(&trace.net, d_logits, grads, need_input_grad)
            .map(|d| d.map(|v| v * T::lit(2.0)))
    }
}

impl<T: Real> Module<T> for GoDisc<T> {
    fn params(&self) -> Vec<&Vec<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.net.params_mut()
    }
}

/// Classifier outputs: per-head logits and their softmax (`â_c`, `â_m`).
#[derive(Clone, Debug, PartialEq)]
pub struct LabOutput<T> {
    pub logits_c: Tensor<T>,
    pub logits_m: Tensor<T>,
    pub probs_c: Tensor<T>,
    pub probs_m: Tensor<T>,
}

impl<T: Real> LabOutput<T> {
    pub fn from_logits(logits_c: Tensor<T>, logits_m: Tensor<T>) -> Self {
        LabOutput {
            probs_c: softmax(&logits_c),
            probs_m: softmax(&logits_m),
            logits_c,
            logits_m,
        }
    }

    pub fn batch(&self) -> usize {
        self.probs_c.batch()
    }
}

/// Spoof score `1 − P(live medium)` per sample.
pub fn golab_spoof_score<T: Real>(out: &LabOutput<T>) -> Vec<T> {
    (0..out.batch()).map(|b| T::one() - out.probs_m.row(b)[0]).collect()
}

#[derive(Clone, Debug)]
pub struct GoLab<T> {
    pub trunk: Sequential<T>,
    pub head_c: Sequential<T>,
    pub head_m: Sequential<T>,
}

#[derive(Clone, Debug)]
pub struct LabTrace<T> {
    trunk: Trace<T>,
    head_c: Trace<T>,
    head_m: Trace<T>,
    pub output: LabOutput<T>,
}

impl<T: Real> GoLab<T> {
    pub fn new(arch: &ArchConfig, n_c: usize, n_m: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (i, &c_out) in arch.lab_channels.iter().enumerate() {
            push_conv_block(&mut layers, Conv2d::new(c_in, c_out, 3, 1, rng), arch);
            if LAB_POOL_AFTER.contains(&(i + 1)) {
                layers.push(Layer::MaxPool2);
            }
            c_in = c_out;
        }
        layers.push(Layer::GlobalAvgPool);
        let mut head = |n: usize| {
            Sequential::new(vec![
                Layer::Linear(Linear::new(c_in, arch.lab_hidden, rng)),
                Layer::Act(arch.activation),
                Layer::Linear(Linear::new(arch.lab_hidden, n, rng)),
            ])
        };
        let head_c = head(n_c);
        let head_m = head(n_m);
        GoLab {
            trunk: Sequential::new(layers),
            head_c,
            head_m,
        }
    }

    pub fn n_c(&self) -> usize {
        match self.head_c.layers.last() {
            Some(Layer::Linear(l)) => l.out_features,
            _ => unreachable!("head ends with a linear layer"),
        }
    }

    pub fn n_m(&self) -> usize {
        match self.head_m.layers.last() {
            Some(Layer::Linear(l)) => l.out_features,
            _ => unreachable!("head ends with a linear layer"),
        }
    }

    /// Zeroes the last layer of both heads so every logit is 0.
    pub fn zero_heads(&mut self) {
        for head in [&mut self.head_c, &mut self.head_m] {
            if let Some(Layer::Linear(l)) = head.layers.last_mut() {
                l.weight.fill(T::zero());
                l.bias.fill(T::zero());
            }
        }
    }

    pub fn forward(&self, images: &Tensor<T>) -> Result<LabOutput<T>> {
        check_images(images, "classifier")?;
        let feats = self.trunk.forward(&shift_to_signed(images))?;
        Ok(LabOutput::from_logits(self.head_c.forward(&feats)?, self.head_m.forward(&feats)?))
    }

    pub fn forward_trace(&self, images: &Tensor<T>) -> Result<LabTrace<T>> {
        check_images(images, "classifier")?;
        let trunk = self.trunk.forward_trace(&shift_to_signed(images))?;
        let head_c = self.head_c.forward_trace(trunk.output())?;
        let head_m = self.head_m.forward_trace(trunk.output())?;
        let output = LabOutput::from_logits(head_c.output().clone(), head_m.output().clone());
        Ok(LabTrace {
            trunk,
            head_c,
            head_m,
            output,
        })
    }

    /// `∂L/∂images` from gradients w.r.t. the two probability matrices.
    pub fn backward(
        &self,
        trace: &LabTrace<T>,
        d_probs_c: &Tensor<T>,
        d_probs_m: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let d_lc = softmax_backward(&trace.output.probs_c, d_probs_c);
        let d_lm = softmax_backward(&trace.output.probs_m, d_probs_m);
        let n_trunk = self.trunk.param_shapes().len();
        let n_hc = self.head_c.param_shapes().len();
        let (g_trunk, g_hc, g_hm) = match grads {
            Some(g) => {
                let (t, rest) = g.split_at_mut(n_trunk);
                let (hc, hm) = rest.split_at_mut(n_hc);
                (Some(t), Some(hc), Some(hm))
            }
            None => (None, None, None),
        };
        let mut d_feat = self.head_c.backward(&trace.head_c, d_lc, g_hc, true).expect("dx");
        let d_feat_m = self.head_m.backward(&trace.head_m, d_lm, g_hm, true).expect("dx");
        for (a, &b) in d_feat.data_mut().iter_mut().zip(d_feat_m.data()) {
            *a += b;
        }
        self.trunk
            .backward(&trace.trunk, d_feat, g_trunk, need_input_grad)
            .map(|d| d.map(|v| v * T::lit(2.0)))
    }
}

impl<T: Real> Module<T> for GoLab<T> {
    fn params(&self) -> Vec<&Vec<T>> {
        let mut p = self.trunk.params();
        p.extend(self.head_c.params());
        p.extend(self.head_m.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut p = self.trunk.params_mut();
        p.extend(self.head_c.params_mut());
        p.extend(self.head_m.params_mut());
        p
    }
}

/// Per-pixel spoof map in `[0, 1]`, shape `[B, 1, H', W']`.
#[derive(Clone, Debug, PartialEq)]
pub struct PadMap<T> {
    pub map: Tensor<T>,
}

impl<T: Real> PadMap<T> {
    /// Mean map value per sample.
    pub fn spoof_scores(&self) -> Vec<T> {
        let n = T::lit(self.map.sample_len() as f64);
        (0..self.map.batch())
            .map(|b| self.map.sample(b).iter().copied().sum::<T>() / n)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct GoPad<T> {
    pub net: Sequential<T>,
    pub patch: usize,
    pub map_size: usize,
}

impl<T: Real> GoPad<T> {
    pub fn new(arch: &ArchConfig, channels: &[usize], patch: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if channels.len() != PAD_STAGES + 1 {
            return Err(GoasError::Config("pad.channels needs 4 widths".into()));
        }
        let map_size = arch.pad_map_size;
        if map_size == 0 || !patch.is_multiple_of(map_size) || !(patch / map_size).is_power_of_two() {
            return Err(GoasError::Config(format!(
                "pad.map_size {map_size} must divide patch {patch} by a power of two"
            )));
        }
        let downsamples = (patch / map_size).trailing_zeros() as usize;
        if downsamples > PAD_STAGES {
            return Err(GoasError::Config(format!(
                "pad.map_size {map_size} needs more than {PAD_STAGES} stride-2 stages"
            )));
        }
        let mut layers = Vec::new();
        push_conv_block(&mut layers, Conv2d::new(3, channels[0], 3, 1, rng), arch);
        for stage in 0..PAD_STAGES {
            let stride = if stage < downsamples { 2 } else { 1 };
            let c = channels[stage];
            layers.push(Layer::Depthwise(DepthwiseConv2d::new(c, 3, stride, rng)));
            layers.push(Layer::Act(arch.activation));
            push_conv_block(&mut layers, Conv2d::new(c, channels[stage + 1], 1, 1, rng), arch);
        }
        let mut head = Conv2d::new(channels[PAD_STAGES], 1, 1, 1, rng);
        head.weight.fill(T::zero());
        head.bias.fill(T::zero());
        layers.push(Layer::Conv2d(head));
        layers.push(Layer::Act(Activation::Sigmoid));
        Ok(GoPad {
            net: Sequential::new(layers),
            patch,
            map_size,
        })
    }

    fn check(&self, images: &Tensor<T>) -> Result<()> {
        check_images(images, "binary map network")?;
        if images.height() != self.patch || images.width() != self.patch {
            return Err(GoasError::shape(format!(
                "binary map network expects {p}x{p} input, got {}x{}",
                images.height(),
                images.width(),
                p = self.patch
            )));
        }
        Ok(())
    }

    pub fn forward(&self, images: &Tensor<T>) -> Result<PadMap<T>> {
        self.check(images)?;
        Ok(PadMap {
            map: self.net.forward(&shift_to_signed(images))?,
        })
    }

    pub fn forward_trace(&self, images: &Tensor<T>) -> Result<Trace<T>> {
        self.check(images)?;
        self.net.forward_trace(&shift_to_signed(images))
    }

    pub fn backward(
        &self,
        trace: &Trace<T>,
        d_map: &Tensor<T>,
        grads: Option<&mut [Vec<T>]>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        self.net
            .backward(trace, d_map.clone(), grads, need_input_grad)
            .map(|d| d.map(|v| v * T::lit(2.0)))
    }
}

impl<T: Real> Module<T> for GoPad<T> {
    fn params(&self) -> Vec<&Vec<T>> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.net.params_mut()
    }
}

/// How the generator is conditioned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorMode {
    /// `[I, N_c, N_m]` with learned prototypes.
    Prototypes,
    /// `[I, M'_c, M'_m]` with constant one-hot maps and no prototype bank.
    OnehotMaps,
}

impl GeneratorMode {
    pub fn conditioning_channels(self, n_c: usize, n_m: usize) -> usize {
        match self {
            GeneratorMode::Prototypes => 2,
            GeneratorMode::OnehotMaps => n_c + n_m,
        }
    }
}

/// All four networks with the configuration they were built from.
#[derive(Clone, Debug)]
pub struct NetworkSet<T> {
    pub arch: ArchConfig,
    pub n_c: usize,
    pub n_m: usize,
    pub gan_patch: usize,
    pub pad_patch: usize,
    pub mode: GeneratorMode,
    pub gen: GoGen<T>,
    pub disc: GoDisc<T>,
    pub lab: GoLab<T>,
    pub pad: GoPad<T>,
}

impl<T: Real> NetworkSet<T> {
    pub fn new(
        arch: &ArchConfig,
        n_c: usize,
        n_m: usize,
        gan_patch: usize,
        pad_patch: usize,
        mode: GeneratorMode,
        seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if n_c == 0 || n_m < 2 {
            return Err(GoasError::Config("need at least one sensor and a live plus one spoof medium".into()));
        }
        if gan_patch < 8 {
            return Err(GoasError::Config(format!("patch size {gan_patch} below the 8-pixel minimum")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = GoGen::new(arch, mode.conditioning_channels(n_c, n_m), &mut rng);
        let disc = GoDisc::new(arch, gan_patch, &mut rng);
        let lab = GoLab::new(arch, n_c, n_m, &mut rng);
        let pad = GoPad::new(arch, &arch.pad_channels, pad_patch, &mut rng)?;
        Ok(NetworkSet {
            arch: arch.clone(),
            n_c,
            n_m,
            gan_patch,
            pad_patch,
            mode,
            gen,
            disc,
            lab,
            pad,
        })
    }
}

/// Free-function forms mirroring the network methods.
pub fn gogen_forward<T: Real>(gen: &GoGen<T>, input: &GeneratorInput<T>) -> Result<Tensor<T>> {
    gen.forward(input)
}

pub fn godisc_forward<T: Real>(disc: &GoDisc<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    disc.forward(images)
}

pub fn golab_forward<T: Real>(lab: &GoLab<T>, images: &Tensor<T>) -> Result<LabOutput<T>> {
    lab.forward(images)
}

pub fn gopad_forward<T: Real>(pad: &GoPad<T>, images: &Tensor<T>) -> Result<PadMap<T>> {
    pad.forward(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn images(b: usize, s: usize) -> Tensor<f32> {
        let n = b * 3 * s * s;
        Tensor::from_vec([b, 3, s, s], (0..n).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()).unwrap()
    }

    #[test]
    fn fresh_generator_is_identity() {
        let g = GoGen::<f32>::new(&ArchConfig::toy(), 2, &mut rng());
        let img = images(2, 8);
        let noise = Tensor::full([2, 2, 8, 8], 0.3);
        let out = g.forward(&GeneratorInput::new(&img, &noise).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn generator_layer_count() {
        let g = GoGen::<f32>::new(&ArchConfig::default(), 2, &mut rng());
        let convs = g.body.layers.iter().filter(|l| matches!(l, Layer::Conv2d(_))).count();
        assert_eq!(convs, GEN_CONVS);
    }

    #[test]
    fn discriminator_and_classifier_layer_counts() {
        let arch = ArchConfig::default();
        let d = GoDisc::<f32>::new(&arch, 64, &mut rng());
        let convs = d.net.layers.iter().filter(|l| matches!(l, Layer::Conv2d(_))).count();
        let fcs = d.net.layers.iter().filter(|l| matches!(l, Layer::Linear(_))).count();
        assert_eq!((convs, fcs), (DISC_CONVS, 2));
        let l = GoLab::<f32>::new(&arch, 7, 7, &mut rng());
        let convs = l.trunk.layers.iter().filter(|l| matches!(l, Layer::Conv2d(_))).count();
        let pools = l.trunk.layers.iter().filter(|l| matches!(l, Layer::MaxPool2)).count();
        assert_eq!((convs, pools), (LAB_CONVS, 3));
    }

    #[test]
    fn disc_rows_sum_to_one_and_are_per_sample() {
        let d = GoDisc::<f64>::new(&ArchConfig::toy(), 8, &mut rng());
        let mut img = images(3, 8).cast::<f64>();
        let first = img.sample(0).to_vec();
        img.sample_mut(2).copy_from_slice(&first);
        let p = d.forward(&img).unwrap();
        assert_eq!(p.shape(), [3, 2, 1, 1]);
        for b in 0..3 {
            assert!((p.row(b).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.row(0), p.row(2));
    }

    #[test]
    fn disc_rejects_wrong_patch_size() {
        let d = GoDisc::<f32>::new(&ArchConfig::toy(), 8, &mut rng());
        assert!(d.forward(&images(1, 16)).is_err());
    }

    #[test]
    fn lab_zero_heads_give_uniform_probs() {
        let mut l = GoLab::<f64>::new(&ArchConfig::toy(), 7, 7, &mut rng());
        l.zero_heads();
        let out = l.forward(&images(2, 8).cast()).unwrap();
        for v in out.probs_c.data().iter().chain(out.probs_m.data()) {
            assert!((v - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lab_argmax_of_probs_matches_logits() {
        let l = GoLab::<f64>::new(&ArchConfig::toy(), 3, 4, &mut rng());
        let out = l.forward(&images(4, 8).cast()).unwrap();
        let am = |r: &[f64]| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        for b in 0..4 {
            assert_eq!(am(out.probs_c.row(b)), am(out.logits_c.row(b)));
            assert_eq!(am(out.probs_m.row(b)), am(out.logits_m.row(b)));
        }
    }

    #[test]
    fn spoof_score_rule() {
        let mk = |row: Vec<f64>| {
            let k = row.len();
            LabOutput {
                logits_c: Tensor::matrix(1, 1, vec![0.0]).unwrap(),
                logits_m: Tensor::matrix(1, k, vec![0.0; k]).unwrap(),
                probs_c: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                probs_m: Tensor::matrix(1, k, row).unwrap(),
            }
        };
        assert_eq!(golab_spoof_score(&mk(vec![1.0, 0.0, 0.0])), vec![0.0]);
        assert_eq!(golab_spoof_score(&mk(vec![0.0, 1.0, 0.0])), vec![1.0]);
        let uniform = golab_spoof_score(&mk(vec![1.0 / 7.0; 7]))[0];
        assert!((uniform - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn pad_map_shapes_and_range() {
        let arch = ArchConfig {
            pad_map_size: 8,
            ..ArchConfig::toy()
        };
        let p = GoPad::<f32>::new(&arch, &arch.pad_channels, 64, &mut rng()).unwrap();
        let m = p.forward(&images(4, 64)).unwrap();
        assert_eq!(m.map.shape(), [4, 1, 8, 8]);
        assert!(m.map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let full = ArchConfig {
            pad_map_size: 64,
            ..ArchConfig::toy()
        };
        let p = GoPad::<f32>::new(&full, &full.pad_channels, 64, &mut rng()).unwrap();
        assert_eq!(p.forward(&images(1, 64)).unwrap().map.shape(), [1, 1, 64, 64]);
        assert!(p.forward(&images(1, 32)).is_err());
    }

    #[test]
    fn pad_zero_params_give_half() {
        let arch = ArchConfig::toy();
        let mut p = GoPad::<f64>::new(&arch, &arch.pad_channels, 32, &mut rng()).unwrap();
        for v in p.params_mut() {
            v.fill(0.0);
        }
        let m = p.forward(&images(2, 32).cast()).unwrap();
        assert_eq!(m.map.shape(), [2, 1, 4, 4]);
        assert!(m.map.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn pad_params_at_most_a_third_of_reference() {
        for arch in [ArchConfig::default(), ArchConfig::compact()] {
            let reduced = GoPad::<f32>::new(&arch, &arch.pad_channels, 256, &mut rng()).unwrap();
            let reference = GoPad::<f32>::new(&arch, &arch.reference_pad_channels(), 256, &mut rng()).unwrap();
            assert!(3 * reduced.param_count() <= reference.param_count());
        }
    }

    #[test]
    fn onehot_map_input_channels() {
        let a_c = Tensor::matrix(1, 3, vec![0.0, 0.0, 1.0]).unwrap();
        let a_m = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        let inp = GeneratorInput::onehot_maps(&images(1, 8), &a_c, &a_m).unwrap();
        assert_eq!(inp.t.channels(), 3 + 5);
        let plane = |c: usize| inp.t.channel_range(c, c + 1);
        assert!(plane(3 + 2).data().iter().all(|&v| v == 1.0));
        assert!(plane(3).data().iter().all(|&v| v == 0.0));
        assert!(plane(3 + 3).data().iter().all(|&v| v == 0.0));
        assert!(plane(3 + 4).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn arch_config_json_uses_dotted_keys() {
        let json = serde_json::to_value(ArchConfig::default()).unwrap();
        for key in ["gen.channels", "disc.channels", "lab.channels", "pad.channels", "pad.map_size", "activation", "norm"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(ArchConfig {
            gen_channels: vec![4; 3],
            ..ArchConfig::default()
        }
        .validate()
        .is_err());
    }
}
