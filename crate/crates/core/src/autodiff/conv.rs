//! 2-D convolution (cross-correlation) and max pooling over NCHW batches.

use super::tape::Var;
use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn cols_len(&self) -> usize {
        self.c * self.k * self.k * self.ho * self.wo
    }
}

/// Unfolds one C×H×W image into a (C·k·k) × (Ho·Wo) column matrix.
fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let hw_out = g.ho * g.wo;
    for ci in 0..g.c {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an N×C×H×W input with an O×C×k×k kernel, no bias.
pub fn conv2d<'t, T: Scalar>(
    input: Var<'t, T>,
    kernel: Var<'t, T>,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    input.same_tape(&kernel)?;
    let (vx, vk) = (input.value(), kernel.value());
    contract!(
        vx.rank() == 4,
        "conv2d: input must be NCHW, got {:?}",
        vx.shape()
    );
    contract!(
        vk.rank() == 4,
        "conv2d: kernel must be OIKK, got {:?}",
        vk.shape()
    );
    contract!(stride >= 1, "conv2d: stride must be positive");
    let (n, c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
    let (o, kc, k, k2) = (vk.shape()[0], vk.shape()[1], vk.shape()[2], vk.shape()[3]);
    contract!(
        k == k2,
        "conv2d: only square kernels supported, got {k}×{k2}"
    );
    contract!(
        kc == c,
        "conv2d: input has {c} channels but kernel expects {kc}"
    );
    contract!(
        h + 2 * padding >= k && w + 2 * padding >= k,
        "conv2d: kernel {k} larger than padded input {h}×{w} (pad {padding})"
    );
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    vx.ensure_finite("conv2d input")?;

    let geom = ConvGeom {
        c,
        h,
        w,
        k,
        stride,
        pad: padding,
        ho,
        wo,
    };
    let ckk = c * k * k;
    let hw_out = ho * wo;
    let mut cols = vec![T::ZERO; geom.cols_len()];
    let mut out = vec![T::ZERO; n * o * hw_out];
    for ni in 0..n {
        im2col(vx.outer(ni), &geom, &mut cols);
        matmul(
            o,
            ckk,
            hw_out,
            vk.data(),
            false,
            &cols,
            false,
            &mut out[ni * o * hw_out..(ni + 1) * o * hw_out],
            false,
        );
    }

    let (ix, ik) = (input.id(), kernel.id());
    Ok(input.tape().push(
        Tensor::new([n, o, ho, wo], out)?,
        &[ix, ik],
        move |g, sink| {
            let mut cols = vec![T::ZERO; geom.cols_len()];
            if sink.wants(ik) {
                let dk = sink.buf(ik).expect("kernel grad");
                for ni in 0..n {
                    im2col(vx.outer(ni), &geom, &mut cols);
                    matmul(
                        o,
                        hw_out,
                        ckk,
                        &g[ni * o * hw_out..(ni + 1) * o * hw_out],
                        false,
                        &cols,
                        true,
                        dk,
                        true,
                    );
                }
            }
            if let Some(dx) = sink.buf(ix) {
                let chw = c * h * w;
                for ni in 0..n {
                    matmul(
                        ckk,
                        o,
                        hw_out,
                        vk.data(),
                        true,
                        &g[ni * o * hw_out..(ni + 1) * o * hw_out],
                        false,
                        &mut cols,
                        false,
                    );
                    col2im(&cols, &geom, &mut dx[ni * chw..(ni + 1) * chw]);
                }
            }
        },
    ))
}

/// Max pooling with a square window; windows never read padding.
pub fn maxpool2d<'t, T: Scalar>(
    input: Var<'t, T>,
    window: usize,
    stride: usize,
) -> Result<Var<'t, T>> {
    let vx = input.value();
    contract!(
        vx.rank() == 4,
        "maxpool2d: input must be NCHW, got {:?}",
        vx.shape()
    );
    contract!(
        window >= 1 && stride >= 1,
        "maxpool2d: window and stride must be positive"
    );
    let (n, c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
    contract!(
        h >= window && w >= window,
        "maxpool2d: window {window} larger than input {h}×{w}"
    );
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for (p, plane) in vx.data().chunks(h * w).enumerate() {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (oy * stride) * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (oy * stride + dy) * w + ox * stride + dx;
                        if plane[idx] > plane[best] {
                            best = idx;
                        }
                    }
                }
                out.push(plane[best]);
                argmax.push(p * h * w + best);
            }
        }
    }
    let ix = input.id();
    Ok(input
        .tape()
        .push(Tensor::new([n, c, ho, wo], out)?, &[ix], move |g, sink| {
            if let Some(dx) = sink.buf(ix) {
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
            }
        }))
}
