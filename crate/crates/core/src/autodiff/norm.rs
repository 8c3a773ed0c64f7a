use super::tape::Var;
use super::tensor::{Scalar, Tensor};
use crate::error::{contract, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Channels per normalization group.
pub const CHANNELS_PER_GROUP: usize = 8;

/// Number of groups used for a layer with `channels` channels: one group per
/// eight channels when that divides evenly, otherwise a single group.
pub fn group_count(channels: usize) -> usize {
    if channels >= CHANNELS_PER_GROUP && channels.is_multiple_of(CHANNELS_PER_GROUP) {
        channels / CHANNELS_PER_GROUP
    } else {
        1
    }
}

/// Per-sample group normalization of an N×C×H×W tensor followed by a
/// per-channel affine `gamma · x̂ + beta`.
pub fn group_norm<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    groups: usize,
) -> Result<Var<'t, T>> {
    x.same_tape(&gamma)?;
    x.same_tape(&beta)?;
    let (vx, vg, vb) = (x.value(), gamma.value(), beta.value());
    contract!(
        vx.rank() == 4,
        "group_norm: input must be NCHW, got {:?}",
        vx.shape()
    );
    let (n, c, h, w) = (vx.shape()[0], vx.shape()[1], vx.shape()[2], vx.shape()[3]);
    contract!(
        groups >= 1 && c % groups == 0,
        "group_norm: {c} channels not divisible into {groups} groups"
    );
    contract!(
        vg.shape() == [c] && vb.shape() == [c],
        "group_norm: affine params must have shape [{c}]"
    );
    let hw = h * w;
    let cg = c / groups;
    let span = cg * hw;
    let count = T::from_f64(span as f64);
    let eps = T::from_f64(GROUP_NORM_EPS);

    let mut xhat = vec![T::ZERO; vx.numel()];
    let mut inv_std = vec![T::ZERO; n * groups];
    for (gi, (src, dst)) in vx
        .data()
        .chunks(span)
        .zip(xhat.chunks_mut(span))
        .enumerate()
    {
        let mut mean = T::ZERO;
        for &v in src {
            mean += v;
        }
        mean = mean / count;
        let mut var = T::ZERO;
        for &v in src {
            let d = v - mean;
            var += d * d;
        }
        var = var / count;
        let is = T::ONE / (var + eps).sqrt();
        inv_std[gi] = is;
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean) * is;
        }
    }
    let mut out = vec![T::ZERO; vx.numel()];
    for (p, (src, dst)) in xhat.chunks(hw).zip(out.chunks_mut(hw)).enumerate() {
        let ch = p % c;
        let (ga, be) = (vg.data()[ch], vb.data()[ch]);
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = ga * v + be;
        }
    }

    let (ix, ig, ib) = (x.id(), gamma.id(), beta.id());
    Ok(x.tape().push(
        Tensor::new([n, c, h, w], out)?,
        &[ix, ig, ib],
        move |g, sink| {
            if let Some(dg) = sink.buf(ig) {
                for (p, (gp, xp)) in g.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                    let mut s = T::ZERO;
                    for (&a, &b) in gp.iter().zip(xp) {
                        s += a * b;
                    }
                    dg[p % c] += s;
                }
            }
            if let Some(db) = sink.buf(ib) {
                for (p, gp) in g.chunks(hw).enumerate() {
                    let mut s = T::ZERO;
                    for &a in gp {
                        s += a;
                    }
                    db[p % c] += s;
                }
            }
            if let Some(dx) = sink.buf(ix) {
                let mut dxhat = vec![T::ZERO; span];
                for gi in 0..n * groups {
                    let base = gi * span;
                    let first_channel = (gi % groups) * cg;
                    for (j, d) in dxhat.iter_mut().enumerate() {
                        *d = g[base + j] * vg.data()[first_channel + j / hw];
                    }
                    let xs = &xhat[base..base + span];
                    let mut mean_d = T::ZERO;
                    let mut mean_dx = T::ZERO;
                    for (&d, &xh) in dxhat.iter().zip(xs) {
                        mean_d += d;
                        mean_dx += d * xh;
                    }
                    mean_d = mean_d / count;
                    mean_dx = mean_dx / count;
                    let is = inv_std[gi];
                    for ((o, &d), &xh) in dx[base..base + span].iter_mut().zip(&dxhat).zip(xs) {
                        *o += is * (d - mean_d - xh * mean_dx);
                    }
                }
            }
        },
    ))
}
