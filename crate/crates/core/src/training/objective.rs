//! One forward/backward evaluation of each composite objective.
//!
//! Gradients are produced only for the groups the phase updates; the frozen
//! groups receive all-zero buffers.

use crate::error::{GoasError, Result};
use crate::losses::{
    cross_entropy, disc_gen_loss, disc_train_loss, discriminator_objective, generator_objective, lab_gen_loss,
    lab_train_loss, vis_loss, GeneratorTerms, LiveLabLoss, LossWeights,
};
use crate::networks::{GeneratorInput, GeneratorMode, GoDisc, GoGen, GoLab, Module};
use crate::nn::Grads;
use crate::noise_bank::NoisePrototypeBank;
use crate::tensor::{Real, Tensor};

/// Borrowed view of the networks that take part in the adversarial game.
#[derive(Clone, Copy, Debug)]
pub struct GanParts<'a, T> {
    pub gen: &'a GoGen<T>,
    pub bank: Option<&'a NoisePrototypeBank<T>>,
    pub disc: &'a GoDisc<T>,
    pub lab: &'a GoLab<T>,
    pub mode: GeneratorMode,
}

/// Gradients for every parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupGrads<T> {
    pub gen: Grads<T>,
    pub bank: Option<Grads<T>>,
    pub disc: Grads<T>,
    pub lab: Grads<T>,
}

impl<T: Real> GroupGrads<T> {
    fn zeros(parts: &GanParts<'_, T>) -> Self {
        GroupGrads {
            gen: parts.gen.zero_grads(),
            bank: parts.bank.map(|b| b.zero_grads()),
            disc: parts.disc.zero_grads(),
            lab: parts.lab.zero_grads(),
        }
    }
}

/// Builds the generator input for targets `(a_c, a_m)`.
pub fn generator_input<T: Real>(parts: &GanParts<'_, T>, images: &Tensor<T>, a_c: &Tensor<T>, a_m: &Tensor<T>) -> Result<GeneratorInput<T>> {
    match parts.mode {
        GeneratorMode::Prototypes => {
            let bank = parts
                .bank
                .ok_or_else(|| GoasError::invalid("prototype mode needs a noise bank"))?;
            if bank.size != images.height() || bank.size != images.width() {
                return Err(GoasError::shape(format!(
                    "prototypes are {s}x{s} but patches are {}x{}",
                    images.height(),
                    images.width(),
                    s = bank.size
                )));
            }
            GeneratorInput::new(images, &bank.select_batch(a_c, a_m)?)
        }
        GeneratorMode::OnehotMaps => GeneratorInput::onehot_maps(images, a_c, a_m),
    }
}

/// Synthesizes `Î` for live images and targets without keeping activations.
pub fn synthesize<T: Real>(parts: &GanParts<'_, T>, live: &Tensor<T>, a_c: &Tensor<T>, a_m: &Tensor<T>) -> Result<Tensor<T>> {
    parts.gen.forward(&generator_input(parts, live, a_c, a_m)?)
}

#[derive(Clone, Debug)]
pub struct GeneratorPass<T> {
    pub terms: GeneratorTerms,
    pub objective: f64,
    /// Classifier cross entropies of `Î` against the targets.
    pub s_c: f64,
    pub s_m: f64,
    pub synthesized: Tensor<T>,
    pub grads: GroupGrads<T>,
}

/// `J_disc_gen + λ0·J_vis + λ1·J_lab_gen` on live images with targets
/// `(a_c, a_m)`; gradients reach the generator and the bank only.
pub fn generator_pass<T: Real>(
    parts: &GanParts<'_, T>,
    live: &Tensor<T>,
    a_c: &Tensor<T>,
    a_m: &Tensor<T>,
    live_loss: LiveLabLoss,
    weights: &LossWeights,
) -> Result<GeneratorPass<T>> {
    let input = generator_input(parts, live, a_c, a_m)?;
    let gen_trace = parts.gen.forward_trace(&input)?;
    let i_hat = &gen_trace.output;

    let disc_trace = parts.disc.forward_trace(i_hat)?;
    let adv = disc_gen_loss(&disc_trace.probs)?;
    let vis = vis_loss(live, i_hat)?;
    let lab_trace = parts.lab.forward_trace(i_hat)?;
    let lab = lab_gen_loss(&lab_trace.output, live_loss, a_c, a_m)?;

    let d_adv = parts
        .disc
        .backward(&disc_trace, &adv.grad, None, true)
        .expect("input gradient requested");
    let (l0, l1) = (T::lit(weights.lambda0), T::lit(weights.lambda1));
    let d_lab = parts
        .lab
        .backward(&lab_trace, &lab.d_probs_c, &lab.d_probs_m, None, true)
        .expect("input gradient requested");
    let mut d_out = d_adv;
    for ((d, &v), &l) in d_out.data_mut().iter_mut().zip(vis.grad.data()).zip(d_lab.data()) {
        *d += l0 * v + l1 * l;
    }

    let mut grads = GroupGrads::zeros(parts);
    let (_, d_cond) = parts.gen.backward(&gen_trace, &d_out, Some(&mut grads.gen.0));
    if let (GeneratorMode::Prototypes, Some(bank), Some(g)) = (parts.mode, parts.bank, grads.bank.as_mut()) {
        bank.backward_batch(a_c, a_m, &d_cond, g);
    }

    let terms = GeneratorTerms {
        disc: adv.value.as_f64(),
        vis: vis.value.as_f64(),
        lab: lab.value.as_f64(),
    };
    Ok(GeneratorPass {
        objective: generator_objective(weights, &terms),
        terms,
        s_c: lab.s_c.as_f64(),
        s_m: lab.s_m.as_f64(),
        synthesized: gen_trace.output.clone(),
        grads,
    })
}

/// Inputs of one discriminator-phase step.
#[derive(Clone, Debug)]
pub struct DiscBatch<T> {
    pub spoof: Tensor<T>,
    pub spoof_a_c: Tensor<T>,
    pub spoof_a_m: Tensor<T>,
    pub live: Tensor<T>,
    pub live_a_c: Tensor<T>,
    pub live_a_m: Tensor<T>,
    /// Synthesis targets applied to `live`.
    pub target_a_c: Tensor<T>,
    pub target_a_m: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorPass<T> {
    pub disc: f64,
    pub lab: f64,
    pub s_c: f64,
    pub s_m: f64,
    pub objective: f64,
    /// Classifier losses restricted to the real live rows.
    pub live_loss: LiveLabLoss,
    /// Visual loss of the synthesized batch, for logging.
    pub vis: f64,
    /// Fraction of real and synthesized rows the discriminator labels correctly.
    pub disc_accuracy: f64,
    pub grads: GroupGrads<T>,
}

/// `J_disc_train + λ1·J_lab_train`; the discriminator separates real spoof
/// images from `Î`, the classifier is supervised on real spoof and live
/// images. Gradients reach the discriminator and classifier only.
pub fn discriminator_pass<T: Real>(
    parts: &GanParts<'_, T>,
    batch: &DiscBatch<T>,
    weights: &LossWeights,
) -> Result<DiscriminatorPass<T>> {
    let i_hat = synthesize(parts, &batch.live, &batch.target_a_c, &batch.target_a_m)?;
    let mut grads = GroupGrads::zeros(parts);

    let real_trace = parts.disc.forward_trace(&batch.spoof)?;
    let synth_trace = parts.disc.forward_trace(&i_hat)?;
    let adv = disc_train_loss(&real_trace.probs, &synth_trace.probs)?;
    parts.disc.backward(&real_trace, &adv.d_real, Some(&mut grads.disc.0), false);
    parts.disc.backward(&synth_trace, &adv.d_synth, Some(&mut grads.disc.0), false);
    let correct = (0..real_trace.probs.batch())
        .filter(|&b| real_trace.probs.row(b)[0] >= T::lit(0.5))
        .count()
        + (0..synth_trace.probs.batch())
            .filter(|&b| synth_trace.probs.row(b)[0] < T::lit(0.5))
            .count();
    let disc_accuracy = correct as f64 / (real_trace.probs.batch() + synth_trace.probs.batch()) as f64;

    let images = Tensor::concat_batch(&[&batch.spoof, &batch.live])?;
    let a_c = Tensor::concat_batch(&[&batch.spoof_a_c, &batch.live_a_c])?;
    let a_m = Tensor::concat_batch(&[&batch.spoof_a_m, &batch.live_a_m])?;
    let lab_trace = parts.lab.forward_trace(&images)?;
    let lab = lab_train_loss(&lab_trace.output, &a_c, &a_m)?;
    let l1 = T::lit(weights.lambda1);
    parts.lab.backward(
        &lab_trace,
        &lab.d_probs_c.map(|g| g * l1),
        &lab.d_probs_m.map(|g| g * l1),
        Some(&mut grads.lab.0),
        false,
    );

    let n_spoof = batch.spoof.batch();
    let live_rows: Vec<usize> = (n_spoof..images.batch()).collect();
    let live_loss = LiveLabLoss {
        s_c: cross_entropy(&lab_trace.output.probs_c.gather(&live_rows), &batch.live_a_c)?
            .value
            .as_f64(),
        s_m: cross_entropy(&lab_trace.output.probs_m.gather(&live_rows), &batch.live_a_m)?
            .value
            .as_f64(),
    };

    let disc = adv.value.as_f64();
    let lab_value = lab.value.as_f64();
    Ok(DiscriminatorPass {
        disc,
        lab: lab_value,
        s_c: lab.s_c.as_f64(),
        s_m: lab.s_m.as_f64(),
        objective: discriminator_objective(weights, disc, lab_value),
        live_loss,
        vis: vis_loss(&batch.live, &i_hat)?.value.as_f64(),
        disc_accuracy,
        grads,
    })
}
