//! Central finite-difference checks of every loss and both composite
//! objectives, in f64 on toy-width networks. Each check panics on failure.

#![allow(dead_code)]

use goas_core::losses::{
    cross_entropy, disc_gen_loss, disc_train_loss, lab_gen_loss, lab_train_loss, pad_loss, vis_loss,
    GroundTruthPadMap, LiveLabLoss, LossWeights,
};
use goas_core::networks::{ArchConfig, GeneratorMode, LabOutput, Module, NetworkSet, PadMap};
use goas_core::noise_bank::{InitScheme, NoisePrototypeBank};
use goas_core::nn::softmax_backward;
use goas_core::training::{discriminator_pass, generator_pass, DiscBatch, GanParts};
use goas_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-3;
const N_C: usize = 2;
const N_M: usize = 3;
const PATCH: usize = 8;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random rows on the probability simplex.
fn probs(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = Vec::new();
    for _ in 0..rows {
        let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = r.iter().sum();
        data.extend(r.iter().map(|v| v / s));
    }
    Tensor::matrix(rows, k, data).unwrap()
}

fn onehots(ids: &[usize], k: usize) -> Tensor<f64> {
    let mut data = vec![0.0; ids.len() * k];
    for (r, &i) in ids.iter().enumerate() {
        data[r * k + i] = 1.0;
    }
    Tensor::matrix(ids.len(), k, data).unwrap()
}

/// Compares `grad` with central differences of `f` at every coordinate of `x`.
fn check_input(name: &str, x: &Tensor<f64>, grad: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += H;
        let mut m = x.clone();
        m.data_mut()[i] -= H;
        let numeric = (f(&p) - f(&m)) / (2.0 * H);
        worst = worst.max(rel_err(grad.data()[i], numeric));
    }
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

/// Checks up to `per_tensor` random coordinates of every parameter tensor.
fn check_params<S: Clone>(
    name: &str,
    state: &S,
    grads: &[Vec<f64>],
    params: impl Fn(&mut S) -> Vec<&mut Vec<f64>>,
    f: impl Fn(&S) -> f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) {
    let mut worst = 0.0f64;
    let mut nonzero = false;
    for (t, g) in grads.iter().enumerate() {
        let picks: Vec<usize> = if g.len() <= per_tensor {
            (0..g.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..g.len())).collect()
        };
        for i in picks {
            let mut p = state.clone();
            params(&mut p)[t][i] += H;
            let mut m = state.clone();
            params(&mut m)[t][i] -= H;
            let numeric = (f(&p) - f(&m)) / (2.0 * H);
            worst = worst.max(rel_err(g[i], numeric));
            nonzero |= g[i] != 0.0;
        }
    }
    assert!(nonzero, "{name}: every probed gradient is zero");
    assert!(worst < TOL, "{name}: max relative error {worst:e}");
}

#[derive(Clone)]
struct Game {
    nets: NetworkSet<f64>,
    bank: NoisePrototypeBank<f64>,
}

impl Game {
    fn new(seed: u64) -> Self {
        let mut nets =
            NetworkSet::<f64>::new(&ArchConfig::toy(), N_C, N_M, PATCH, 16, GeneratorMode::Prototypes, seed).unwrap();
        // The generator starts as the identity; give its zero-initialised
        // layers some weight so every path carries gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        for p in nets.gen.params_mut() {
            if p.iter().all(|&v| v == 0.0) {
                p.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
            }
        }
        let bank = NoisePrototypeBank::init(N_C, N_M, PATCH, InitScheme::Gaussian { std: 0.3 }, seed + 1).unwrap();
        Game { nets, bank }
    }

    fn parts(&self) -> GanParts<'_, f64> {
        GanParts {
            gen: &self.nets.gen,
            bank: Some(&self.bank),
            disc: &self.nets.disc,
            lab: &self.nets.lab,
            mode: GeneratorMode::Prototypes,
        }
    }
}

pub fn visual_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let i = uniform([2, 3, 4, 4], 0.0, 1.0, &mut rng);
    let i_hat = uniform([2, 3, 4, 4], 0.0, 1.0, &mut rng);
    let l = vis_loss(&i, &i_hat).unwrap();
    check_input("J_vis", &i_hat, &l.grad, |x| vis_loss(&i, x).unwrap().value);
}

pub fn discriminator_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let real = probs(4, 2, &mut rng);
    let synth = probs(5, 2, &mut rng);
    let l = disc_train_loss(&real, &synth).unwrap();
    check_input("J_disc_train (real)", &real, &l.d_real, |x| disc_train_loss(x, &synth).unwrap().value);
    check_input("J_disc_train (synth)", &synth, &l.d_synth, |x| disc_train_loss(&real, x).unwrap().value);
    let g = disc_gen_loss(&synth).unwrap();
    check_input("J_disc_test", &synth, &g.grad, |x| disc_gen_loss(x).unwrap().value);
}

pub fn cross_entropies_through_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits_c = uniform([5, N_C, 1, 1], -2.0, 2.0, &mut rng);
    let logits_m = uniform([5, N_M, 1, 1], -2.0, 2.0, &mut rng);
    let a_c = onehots(&[0, 1, 1, 0, 1], N_C);
    let a_m = onehots(&[2, 0, 1, 1, 2], N_M);
    let out = LabOutput::from_logits(logits_c.clone(), logits_m.clone());

    let s_c = cross_entropy(&out.probs_c, &a_c).unwrap();
    check_input("S_c", &out.probs_c, &s_c.grad, |p| cross_entropy(p, &a_c).unwrap().value);
    let s_m = cross_entropy(&out.probs_m, &a_m).unwrap();
    check_input("S_m", &out.probs_m, &s_m.grad, |p| cross_entropy(p, &a_m).unwrap().value);

    let train = lab_train_loss(&out, &a_c, &a_m).unwrap();
    let d_c = softmax_backward(&out.probs_c, &train.d_probs_c);
    let d_m = softmax_backward(&out.probs_m, &train.d_probs_m);
    check_input("J_lab_train (sensor logits)", &logits_c, &d_c, |z| {
        lab_train_loss(&LabOutput::from_logits(z.clone(), logits_m.clone()), &a_c, &a_m).unwrap().value
    });
    check_input("J_lab_train (medium logits)", &logits_m, &d_m, |z| {
        lab_train_loss(&LabOutput::from_logits(logits_c.clone(), z.clone()), &a_c, &a_m).unwrap().value
    });

    let live = LiveLabLoss { s_c: 0.4, s_m: 1.7 };
    let gen = lab_gen_loss(&out, live, &a_c, &a_m).unwrap();
    let d_c = softmax_backward(&out.probs_c, &gen.d_probs_c);
    let d_m = softmax_backward(&out.probs_m, &gen.d_probs_m);
    check_input("J_lab_test (sensor logits)", &logits_c, &d_c, |z| {
        lab_gen_loss(&LabOutput::from_logits(z.clone(), logits_m.clone()), live, &a_c, &a_m).unwrap().value
    });
    check_input("J_lab_test (medium logits)", &logits_m, &d_m, |z| {
        lab_gen_loss(&LabOutput::from_logits(logits_c.clone(), z.clone()), live, &a_c, &a_m).unwrap().value
    });
}

pub fn classifier_loss_through_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nets = NetworkSet::<f64>::new(&ArchConfig::toy(), N_C, N_M, PATCH, 16, GeneratorMode::Prototypes, 4).unwrap();
    let x = uniform([3, 3, PATCH, PATCH], 0.0, 1.0, &mut rng);
    let a_c = onehots(&[0, 1, 0], N_C);
    let a_m = onehots(&[0, 2, 1], N_M);
    let loss = |lab: &goas_core::networks::GoLab<f64>| lab_train_loss(&lab.forward(&x).unwrap(), &a_c, &a_m).unwrap();
    let trace = nets.lab.forward_trace(&x).unwrap();
    let l = loss(&nets.lab);
    let mut grads = nets.lab.zero_grads();
    let dx = nets
        .lab
        .backward(&trace, &l.d_probs_c, &l.d_probs_m, Some(&mut grads.0), true)
        .unwrap();
    check_params("J_lab_train (params)", &nets.lab, &grads.0, |n| n.params_mut(), |n| loss(n).value, 6, &mut rng);
    check_input("J_lab_train (input)", &x, &dx, |x| {
        lab_train_loss(&nets.lab.forward(x).unwrap(), &a_c, &a_m).unwrap().value
    });
}

pub fn binary_map_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let map = uniform([3, 1, 4, 4], -0.5, 1.5, &mut rng);
    let g = GroundTruthPadMap::from_labels(&[true, false, true], 4, 4);
    let l = pad_loss(&PadMap { map: map.clone() }, &g).unwrap();
    check_input("J_pad (map)", &map, &l.grad, |m| pad_loss(&PadMap { map: m.clone() }, &g).unwrap().value);

    let mut nets = NetworkSet::<f64>::new(&ArchConfig::toy(), N_C, N_M, PATCH, 16, GeneratorMode::Prototypes, 5).unwrap();
    for p in nets.pad.params_mut() {
        if p.iter().all(|&v| v == 0.0) {
            p.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    let x = uniform([3, 3, 16, 16], 0.0, 1.0, &mut rng);
    let trace = nets.pad.forward_trace(&x).unwrap();
    let l = pad_loss(&PadMap { map: trace.output().clone() }, &g).unwrap();
    let mut grads = nets.pad.zero_grads();
    nets.pad.backward(&trace, &l.grad, Some(&mut grads.0), false);
    check_params(
        "J_pad (params)",
        &nets.pad,
        &grads.0,
        |n| n.params_mut(),
        |n| pad_loss(&n.forward(&x).unwrap(), &g).unwrap().value,
        6,
        &mut rng,
    );
}

fn targets(rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f64>, Tensor<f64>) {
    let c: Vec<usize> = (0..n).map(|_| rng.random_range(0..N_C)).collect();
    let m: Vec<usize> = (0..n).map(|_| rng.random_range(1..N_M)).collect();
    (onehots(&c, N_C), onehots(&m, N_M))
}

pub fn generator_objective_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let game = Game::new(6);
    let live = uniform([3, 3, PATCH, PATCH], 0.2, 0.8, &mut rng);
    let (a_c, a_m) = targets(&mut rng, 3);
    let weights = LossWeights::default();
    let cached = LiveLabLoss { s_c: 0.6, s_m: 1.1 };
    let objective = |g: &Game| {
        generator_pass(&g.parts(), &live, &a_c, &a_m, cached, &weights)
            .unwrap()
            .objective
    };
    let pass = generator_pass(&game.parts(), &live, &a_c, &a_m, cached, &weights).unwrap();
    assert!(pass.grads.disc.is_zero() && pass.grads.lab.is_zero());
    check_params(
        "generator objective (generator)",
        &game,
        &pass.grads.gen.0,
        |g| g.nets.gen.params_mut(),
        objective,
        6,
        &mut rng,
    );
    check_params(
        "generator objective (prototypes)",
        &game,
        &pass.grads.bank.as_ref().unwrap().0,
        |g| g.bank.params_mut(),
        objective,
        40,
        &mut rng,
    );
}

pub fn discriminator_objective_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let game = Game::new(7);
    let spoof_c = [0, 1, 1];
    let spoof_m = [1, 2, 1];
    let (target_a_c, target_a_m) = targets(&mut rng, 2);
    let batch = DiscBatch {
        spoof: uniform([3, 3, PATCH, PATCH], 0.0, 1.0, &mut rng),
        spoof_a_c: onehots(&spoof_c, N_C),
        spoof_a_m: onehots(&spoof_m, N_M),
        live: uniform([2, 3, PATCH, PATCH], 0.2, 0.8, &mut rng),
        live_a_c: onehots(&[1, 0], N_C),
        live_a_m: onehots(&[0, 0], N_M),
        target_a_c,
        target_a_m,
    };
    let weights = LossWeights::default();
    let objective = |g: &Game| discriminator_pass(&g.parts(), &batch, &weights).unwrap().objective;
    let pass = discriminator_pass(&game.parts(), &batch, &weights).unwrap();
    assert!(pass.grads.gen.is_zero());
    assert!(pass.grads.bank.as_ref().unwrap().is_zero());
    check_params(
        "discriminator objective (discriminator)",
        &game,
        &pass.grads.disc.0,
        |g| g.nets.disc.params_mut(),
        objective,
        6,
        &mut rng,
    );
    check_params(
        "discriminator objective (classifier)",
        &game,
        &pass.grads.lab.0,
        |g| g.nets.lab.params_mut(),
        objective,
        6,
        &mut rng,
    );
}

pub const CHECKS: &[(&str, fn())] = &[
    ("visual loss", visual_loss),
    ("discriminator losses", discriminator_losses),
    ("cross-entropies", cross_entropies_through_softmax),
    ("classifier loss through network", classifier_loss_through_network),
    ("binary map loss", binary_map_loss),
    ("generator objective", generator_objective_gradients),
    ("discriminator objective", discriminator_objective_gradients),
];
