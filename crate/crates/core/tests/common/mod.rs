//! Shared test oracles: central finite differences and random tensors.
#![allow(dead_code)]

pub mod gradsuite;

use attn_guide::autodiff::{mul, sum_all, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Coordinates probed per input tensor; small tensors are probed exhaustively.
pub const FD_MAX_COORDS: usize = 48;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    use rand_distr::{Distribution, Normal};
    let d = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| d.sample(rng)).collect()).unwrap()
}

/// Projects a tensor-valued output onto a fixed random direction so a
/// scalar objective exercises every output element.
pub fn project<'t>(out: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let dir = uniform(&mut r, &out.shape(), -1.0, 1.0);
    let d = out.tape().constant(dir).unwrap();
    sum_all(mul(out, d).unwrap())
}

pub struct GradReport {
    pub rel_error: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar function with central
/// differences `(f(x+h) − f(x−h)) / 2h`; relative error is
/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over all probed
/// coordinates.
pub fn grad_check<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> GradReport
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|t| tape.param(t.clone()).unwrap())
        .collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
        f(&tape, &vars).item()
    };

    let mut r = rng(seed);
    let (mut diff2, mut a2, mut n2, mut checked) = (0.0, 0.0, 0.0, 0);
    for (i, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = if t.numel() <= FD_MAX_COORDS {
            (0..t.numel()).collect()
        } else {
            (0..FD_MAX_COORDS)
                .map(|_| r.random_range(0..t.numel()))
                .collect()
        };
        for j in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            checked += 1;
        }
    }
    let denom = a2.sqrt().max(n2.sqrt());
    let rel_error = if denom < 1e-12 {
        diff2.sqrt()
    } else {
        diff2.sqrt() / denom
    };
    GradReport { rel_error, checked }
}
