//! Loss functions and the two composite objectives.
//!
//! Every loss is a batch (and pixel) mean. Each returns its value together
//! with the gradient w.r.t. its differentiable inputs so the training loop
//! can backpropagate without a tape.

use serde::{Deserialize, Serialize};

use crate::error::{GoasError, Result};
use crate::networks::{LabOutput, PadMap};
use crate::tensor::{Real, Tensor};

/// Probability clamp keeping every logarithm finite.
pub const PROB_EPS: f64 = 1e-7;
/// Discriminator column holding the probability of "real spoof image".
pub const REAL_CLASS: usize = 0;
pub const LIVE_LOSS_DECAY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the visual-quality term.
    pub lambda0: f64,
    /// Weight of the classifier terms.
    pub lambda1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda0: 0.5,
            lambda1: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0 && self.lambda1 >= 0.0) || !self.lambda0.is_finite() || !self.lambda1.is_finite() {
            return Err(GoasError::Config(format!("loss weights must be nonnegative, got {self:?}")));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient w.r.t. one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Loss<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GoasError::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let eps = T::lit(PROB_EPS);
    if p < eps {
        (eps, false)
    } else if p > T::one() - eps {
        (T::one() - eps, false)
    } else {
        (p, true)
    }
}

/// Mean of `−log(clamp(p))`; gradient is zero where the clamp is active.
fn neg_log_mean<T: Real>(p: T, n: usize) -> (T, T) {
    let (c, live) = clamp_prob(p);
    let n = T::lit(n as f64);
    (-c.ln() / n, if live { -T::one() / (c * n) } else { T::zero() })
}

/// Mean of `−log(1 − clamp(p))`, derivative w.r.t. `p`.
fn neg_log1m_mean<T: Real>(p: T, n: usize) -> (T, T) {
    let (c, live) = clamp_prob(p);
    let n = T::lit(n as f64);
    (-(T::one() - c).ln() / n, if live { T::one() / ((T::one() - c) * n) } else { T::zero() })
}

fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<Loss<T>> {
    same_shape(a, b, what)?;
    let n = T::lit(a.len().max(1) as f64);
    let mut value = T::zero();
    let mut grad = Tensor::zeros(a.shape());
    for ((g, &x), &y) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = x - y;
        value += d * d;
        *g = T::lit(2.0) * d / n;
    }
    Ok(Loss { value: value / n, grad })
}

/// Mean squared difference between generated and source images; the
/// gradient is w.r.t. `i_hat`.
pub fn vis_loss<T: Real>(i: &Tensor<T>, i_hat: &Tensor<T>) -> Result<Loss<T>> {
    mse(i_hat, i, "visual loss")
}

fn check_probs<T: Real>(p: &Tensor<T>, k: usize, what: &str) -> Result<()> {
    if p.sample_len() != k || p.batch() == 0 {
        return Err(GoasError::shape(format!(
            "{what}: expected non-empty [B, {k}] probabilities, got {:?}",
            p.shape()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscTrainLoss<T> {
    pub value: T,
    pub d_real: Tensor<T>,
    pub d_synth: Tensor<T>,
}

/// `−E_R[log p_real] − E_L[log(1 − p_real(Î))]` over discriminator rows for
/// real spoof images and for synthesized images.
pub fn disc_train_loss<T: Real>(real: &Tensor<T>, synth: &Tensor<T>) -> Result<DiscTrainLoss<T>> {
    disc_train_loss_with_class(real, synth, REAL_CLASS)
}

/// [`disc_train_loss`] with "real spoof image" read from column `real_class`.
pub fn disc_train_loss_with_class<T: Real>(
    real: &Tensor<T>,
    synth: &Tensor<T>,
    real_class: usize,
) -> Result<DiscTrainLoss<T>> {
    if real_class > 1 {
        return Err(GoasError::invalid(format!("class index {real_class} out of range for two columns")));
    }
    check_probs(real, 2, "discriminator loss (real)")?;
    check_probs(synth, 2, "discriminator loss (synthesized)")?;
    let mut value = T::zero();
    let mut d_real = Tensor::zeros(real.shape());
    for b in 0..real.batch() {
        let (v, g) = neg_log_mean(real.row(b)[real_class], real.batch());
        value += v;
        d_real.sample_mut(b)[real_class] = g;
    }
    let mut d_synth = Tensor::zeros(synth.shape());
    for b in 0..synth.batch() {
        let (v, g) = neg_log1m_mean(synth.row(b)[real_class], synth.batch());
        value += v;
        d_synth.sample_mut(b)[real_class] = g;
    }
    Ok(DiscTrainLoss { value, d_real, d_synth })
}

/// `−E_L[log p_real(Î)]`: small when synthesized images pass as real spoofs.
pub fn disc_gen_loss<T: Real>(synth: &Tensor<T>) -> Result<Loss<T>> {
    check_probs(synth, 2, "generator adversarial loss")?;
    let mut value = T::zero();
    let mut grad = Tensor::zeros(synth.shape());
    for b in 0..synth.batch() {
        let (v, g) = neg_log_mean(synth.row(b)[REAL_CLASS], synth.batch());
        value += v;
        grad.sample_mut(b)[REAL_CLASS] = g;
    }
    Ok(Loss { value, grad })
}

/// Mean over the batch of `−Σ_k onehot_k log(clamp(probs_k))`.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<Loss<T>> {
    same_shape(probs, onehot, "cross entropy")?;
    if probs.batch() == 0 {
        return Err(GoasError::shape("cross entropy over an empty batch"));
    }
    let n = probs.batch();
    let mut value = T::zero();
    let mut grad = Tensor::zeros(probs.shape());
    for b in 0..n {
        for (k, (&p, &a)) in probs.row(b).iter().zip(onehot.row(b)).enumerate() {
            if a != T::zero() {
                let (v, g) = neg_log_mean(p, n);
                value += a * v;
                grad.sample_mut(b)[k] = a * g;
            }
        }
    }
    Ok(Loss { value, grad })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabLoss<T> {
    pub value: T,
    /// Sensor cross entropy.
    pub s_c: T,
    /// Medium cross entropy.
    pub s_m: T,
    pub d_probs_c: Tensor<T>,
    pub d_probs_m: Tensor<T>,
}

/// `S_c + S_m` on labelled images.
pub fn lab_train_loss<T: Real>(out: &LabOutput<T>, a_c: &Tensor<T>, a_m: &Tensor<T>) -> Result<LabLoss<T>> {
    let c = cross_entropy(&out.probs_c, a_c)?;
    let m = cross_entropy(&out.probs_m, a_m)?;
    Ok(LabLoss {
        value: c.value + m.value,
        s_c: c.value,
        s_m: m.value,
        d_probs_c: c.grad,
        d_probs_m: m.grad,
    })
}

/// Classifier losses on real live images, used as constant denominators of
/// the generator's classification term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveLabLoss {
    pub s_c: f64,
    pub s_m: f64,
}

/// Exponential moving average of [`LiveLabLoss`]; the first observation is
/// taken as is.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveLossTracker {
    pub decay: f64,
    pub current: LiveLabLoss,
    pub observed: bool,
}

impl Default for LiveLossTracker {
    fn default() -> Self {
        LiveLossTracker {
            decay: LIVE_LOSS_DECAY,
            current: LiveLabLoss::default(),
            observed: false,
        }
    }
}

impl LiveLossTracker {
    pub fn update(&mut self, s_c: f64, s_m: f64) {
        if self.observed {
            let d = self.decay;
            self.current.s_c = d * self.current.s_c + (1.0 - d) * s_c;
            self.current.s_m = d * self.current.s_m + (1.0 - d) * s_m;
        } else {
            self.current = LiveLabLoss { s_c, s_m };
            self.observed = true;
        }
    }
}

/// `S_m(Î)/(1 + S_m_live) + S_c(Î)/(1 + S_c_live)` against the synthesis
/// targets.
pub fn lab_gen_loss<T: Real>(
    out: &LabOutput<T>,
    live: LiveLabLoss,
    target_a_c: &Tensor<T>,
    target_a_m: &Tensor<T>,
) -> Result<LabLoss<T>> {
    if !(live.s_c >= 0.0 && live.s_m >= 0.0) || !live.s_c.is_finite() || !live.s_m.is_finite() {
        return Err(GoasError::invalid(format!("cached live losses must be finite and nonnegative, got {live:?}")));
    }
    let base = lab_train_loss(out, target_a_c, target_a_m)?;
    let wc = T::lit(1.0 / (1.0 + live.s_c));
    let wm = T::lit(1.0 / (1.0 + live.s_m));
    Ok(LabLoss {
        value: base.s_m * wm + base.s_c * wc,
        s_c: base.s_c,
        s_m: base.s_m,
        d_probs_c: base.d_probs_c.map(|g| g * wc),
        d_probs_m: base.d_probs_m.map(|g| g * wm),
    })
}

/// Per-sample constant target map: 0 for live, 1 for spoof.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthPadMap<T> {
    pub g: Tensor<T>,
}

impl<T: Real> GroundTruthPadMap<T> {
    pub fn from_labels(is_spoof: &[bool], height: usize, width: usize) -> Self {
        let mut g = Tensor::zeros([is_spoof.len(), 1, height, width]);
        for (b, &s) in is_spoof.iter().enumerate() {
            if s {
                g.sample_mut(b).fill(T::one());
            }
        }
        GroundTruthPadMap { g }
    }

    pub fn is_constant_per_sample(&self) -> bool {
        (0..self.g.batch()).all(|b| {
            let s = self.g.sample(b);
            s.iter().all(|&v| v == s[0]) && (s[0] == T::zero() || s[0] == T::one())
        })
    }
}

/// Mean squared error between predicted and target maps.
pub fn pad_loss<T: Real>(map: &PadMap<T>, g: &GroundTruthPadMap<T>) -> Result<Loss<T>> {
    mse(&map.map, &g.g, "binary map loss")
}

/// Component values of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTerms {
    pub disc: f64,
    pub vis: f64,
    pub lab: f64,
}

/// `J_disc_gen + λ0·J_vis + λ1·J_lab_gen`.
pub fn generator_objective(weights: &LossWeights, terms: &GeneratorTerms) -> f64 {
    terms.disc + weights.lambda0 * terms.vis + weights.lambda1 * terms.lab
}

/// `J_disc_train + λ1·J_lab_train`.
pub fn discriminator_objective(weights: &LossWeights, disc: f64, lab: f64) -> f64 {
    disc + weights.lambda1 * lab
}
