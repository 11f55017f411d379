#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repfuse::autodiff::{Graph, Var};
use repfuse::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in [-1, 1] kept away from zero so ReLU kinks are not
/// straddled by a finite-difference step.
pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if v.abs() > 1e-2 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Largest entry-wise deviation relative to the largest reference magnitude.
pub fn max_rel_err(got: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(got.len(), reference.len());
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    got.iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central differences of a scalar function of several tensors, with respect
/// to input `which`.
pub fn central_diff<F>(f: &F, inputs: &[Tensor<f64>], which: usize) -> Vec<f64>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut out = Vec::with_capacity(inputs[which].len());
    for i in 0..inputs[which].len() {
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        let mut d = plus[which].data().to_vec();
        d[i] += FD_STEP;
        plus[which] = Tensor::new(plus[which].shape().to_vec(), d).unwrap();
        let mut d = minus[which].data().to_vec();
        d[i] -= FD_STEP;
        minus[which] = Tensor::new(minus[which].shape().to_vec(), d).unwrap();
        out.push((f(&plus) - f(&minus)) / (2.0 * FD_STEP));
    }
    out
}

/// Compares reverse-mode gradients of `build` against central differences
/// for every input; returns the worst relative error.
pub fn check_first_order<B>(build: B, inputs: &[Tensor<f64>]) -> f64
where
    B: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&g, &vars);
    let grads = g.backward(root, &vars, false).unwrap();

    let eval = |ts: &[Tensor<f64>]| {
        let g = Graph::inference();
        let vars: Vec<_> = ts.iter().map(|t| g.input(t.clone())).collect();
        build(&g, &vars).item()
    };
    let mut worst: f64 = 0.0;
    for (k, grad) in grads.iter().enumerate() {
        let fd = central_diff(&eval, inputs, k);
        worst = worst.max(max_rel_err(grad.value().data(), &fd));
    }
    worst
}
