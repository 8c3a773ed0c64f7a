//! Separable bicubic upsampling.
//!
//! Uses the cubic convolution kernel with `a = -0.75`, half-pixel-centre
//! alignment and edge replication, i.e. the usual image-resize convention.
//! Because the operator is linear it is applied as `Ry · X · Rxᵀ` with two
//! small interpolation matrices, which also makes the backward pass the
//! transpose product.

use std::rc::Rc;

use super::tape::Var;
use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{contract, Result};

pub const CUBIC_A: f64 = -0.75;

fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Row-major `dst × src` interpolation matrix for one axis.
pub fn bicubic_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let pos = (i as f64 + 0.5) * scale - 0.5;
        let base = pos.floor();
        let t = pos - base;
        let weights = [cubic(t + 1.0), cubic(t), cubic(1.0 - t), cubic(2.0 - t)];
        for (tap, w) in weights.iter().enumerate() {
            let j = (base as isize + tap as isize - 1).clamp(0, src as isize - 1) as usize;
            m[i * src + j] += w;
        }
    }
    m
}

/// Upsamples the last two axes of a tensor to `target_h × target_w`.
pub fn bicubic_upsample<'t, T: Scalar>(
    x: Var<'t, T>,
    target_h: usize,
    target_w: usize,
) -> Result<Var<'t, T>> {
    let vx = x.value();
    let shape = vx.shape().to_vec();
    contract!(
        shape.len() >= 2,
        "bicubic_upsample: need rank ≥ 2, got {shape:?}"
    );
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    contract!(
        h >= 2 && w >= 2,
        "bicubic_upsample: source {h}×{w} smaller than 2×2"
    );
    contract!(
        target_h >= h && target_w >= w,
        "bicubic_upsample: target {target_h}×{target_w} smaller than source {h}×{w}"
    );
    let ry: Rc<Vec<T>> = Rc::new(
        bicubic_matrix(h, target_h)
            .into_iter()
            .map(T::from_f64)
            .collect(),
    );
    let rx: Rc<Vec<T>> = Rc::new(
        bicubic_matrix(w, target_w)
            .into_iter()
            .map(T::from_f64)
            .collect(),
    );
    let planes = vx.numel() / (h * w);
    let (th, tw) = (target_h, target_w);

    let mut out = vec![T::ZERO; planes * th * tw];
    let mut tmp = vec![T::ZERO; th * w];
    for (src, dst) in vx.data().chunks(h * w).zip(out.chunks_mut(th * tw)) {
        matmul(th, h, w, &ry, false, src, false, &mut tmp, false);
        matmul(th, w, tw, &tmp, false, &rx, true, dst, false);
    }
    let mut out_shape = shape.clone();
    let rank = out_shape.len();
    out_shape[rank - 2] = th;
    out_shape[rank - 1] = tw;

    let ix = x.id();
    Ok(x.tape()
        .push(Tensor::new(out_shape, out)?, &[ix], move |g, sink| {
            if let Some(dx) = sink.buf(ix) {
                let mut tmp = vec![T::ZERO; th * w];
                for (gp, dp) in g.chunks(th * tw).zip(dx.chunks_mut(h * w)) {
                    matmul(th, tw, w, gp, false, &rx, false, &mut tmp, false);
                    matmul(h, th, w, &ry, true, &tmp, false, dp, true);
                }
            }
        }))
}

/// Value-only upsampling of a single `h × w` plane, used for visualization.
pub fn upsample_plane(
    plane: &[f32],
    h: usize,
    w: usize,
    target_h: usize,
    target_w: usize,
) -> Vec<f32> {
    let ry: Vec<f64> = bicubic_matrix(h, target_h);
    let rx: Vec<f64> = bicubic_matrix(w, target_w);
    let src: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; target_h * w];
    matmul(target_h, h, w, &ry, false, &src, false, &mut tmp, false);
    let mut out = vec![0.0; target_h * target_w];
    matmul(
        target_h, w, target_w, &tmp, false, &rx, true, &mut out, false,
    );
    out.into_iter().map(|v| v as f32).collect()
}
