#![allow(dead_code)]

pub mod suite;

use std::collections::BTreeMap;

use dropprof::model::{Checkpoint, DropoutConfig, TokenMatrix};
use dropprof::numerics::{Graph, RngStream, Tensor, Var};
use dropprof::trainer::loss_and_grads;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// `‖a − n‖ / max(‖a‖ + ‖n‖, tiny)` over a whole gradient tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

/// A scalar function of several input tensors, built on a fresh graph.
pub type Builder = dyn Fn(&mut Graph<'_>, &[Var]) -> Var;

/// Central-difference check of every input of `build`. Returns the worst
/// relative error across inputs.
pub fn check_graph(inputs: &[Tensor], build: &Builder) -> f64 {
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars);
    let grads = g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap().data().to_vec();
        let mut numeric = Vec::with_capacity(input.numel());
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Finite-difference check of a full model loss with respect to `coords`
/// randomly chosen parameter coordinates. Dropout masks are replayed from the
/// same stream on every evaluation.
pub fn check_model(
    ckpt: &Checkpoint,
    tokens: &TokenMatrix,
    labels: &[bool],
    dropout: &DropoutConfig,
    stream: RngStream,
    coords: usize,
    seed: u64,
) -> f64 {
    let rows: Vec<usize> = (0..tokens.rows()).collect();
    let (_, _, grads) = loss_and_grads(ckpt, tokens, labels, &rows, dropout, true, stream).unwrap();
    let loss_at = |params: BTreeMap<String, Tensor>| {
        let mut c = ckpt.clone();
        c.parameters = params;
        loss_and_grads(&c, tokens, labels, &rows, dropout, true, stream)
            .unwrap()
            .0
    };
    let names: Vec<&String> = ckpt.parameters.keys().collect();
    let mut r = rng(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..coords {
        let name = names[r.gen_range(0..names.len())];
        let j = r.gen_range(0..ckpt.parameters[name].numel());
        let mut plus = ckpt.parameters.clone();
        plus.get_mut(name).unwrap().data_mut()[j] += FD_STEP;
        let mut minus = ckpt.parameters.clone();
        minus.get_mut(name).unwrap().data_mut()[j] -= FD_STEP;
        numeric.push((loss_at(plus) - loss_at(minus)) / (2.0 * FD_STEP));
        analytic.push(grads[name].data()[j]);
    }
    relative_error(&analytic, &numeric)
}
