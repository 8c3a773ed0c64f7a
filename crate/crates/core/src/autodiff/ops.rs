//! Elementwise, reduction, softmax and affine operators.

use std::rc::Rc;

use super::tape::Var;
use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{contract, Result};

fn same_shape<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>, op: &str) -> Result<()> {
    a.same_tape(b)?;
    let (sa, sb) = (a.shape(), b.shape());
    contract!(sa == sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
    Ok(())
}

/// Splits a rank ≥ 2 shape into (outer count, spatial size) over the last two axes.
fn spatial_split(shape: &[usize], op: &str) -> Result<(usize, usize)> {
    contract!(shape.len() >= 2, "{op}: need rank ≥ 2, got {shape:?}");
    let hw = shape[shape.len() - 2] * shape[shape.len() - 1];
    let outer = shape[..shape.len() - 2].iter().product();
    Ok((outer, hw))
}

pub fn add<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape(&a, &b, "add")?;
    let (va, vb) = (a.value(), b.value());
    let out: Vec<T> = va
        .data()
        .iter()
        .zip(vb.data())
        .map(|(&x, &y)| x + y)
        .collect();
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape()
        .push(Tensor::new(va.shape(), out)?, &[ia, ib], move |g, sink| {
            sink.add(ia, g);
            sink.add(ib, g);
        }))
}

pub fn mul<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape(&a, &b, "mul")?;
    let (va, vb) = (a.value(), b.value());
    let out: Vec<T> = va
        .data()
        .iter()
        .zip(vb.data())
        .map(|(&x, &y)| x * y)
        .collect();
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape()
        .push(Tensor::new(va.shape(), out)?, &[ia, ib], move |g, sink| {
            if let Some(buf) = sink.buf(ia) {
                for ((d, &gi), &y) in buf.iter_mut().zip(g).zip(vb.data()) {
                    *d += gi * y;
                }
            }
            if let Some(buf) = sink.buf(ib) {
                for ((d, &gi), &x) in buf.iter_mut().zip(g).zip(va.data()) {
                    *d += gi * x;
                }
            }
        }))
}

pub fn scale<'t, T: Scalar>(a: Var<'t, T>, s: T) -> Var<'t, T> {
    let va = a.value();
    let out: Vec<T> = va.data().iter().map(|&x| x * s).collect();
    let ia = a.id();
    a.tape().push(
        Tensor::new(va.shape(), out).expect("same numel"),
        &[ia],
        move |g, sink| {
            if let Some(buf) = sink.buf(ia) {
                for (d, &gi) in buf.iter_mut().zip(g) {
                    *d += gi * s;
                }
            }
        },
    )
}

pub fn relu<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let va = a.value();
    let out: Vec<T> = va.data().iter().map(|&x| x.max(T::ZERO)).collect();
    let ia = a.id();
    a.tape().push(
        Tensor::new(va.shape(), out).expect("same numel"),
        &[ia],
        move |g, sink| {
            if let Some(buf) = sink.buf(ia) {
                for ((d, &gi), &x) in buf.iter_mut().zip(g).zip(va.data()) {
                    if x > T::ZERO {
                        *d += gi;
                    }
                }
            }
        },
    )
}

/// Sum of every element, as a scalar.
pub fn sum_all<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let va = a.value();
    let mut s = T::ZERO;
    for &x in va.data() {
        s += x;
    }
    let (ia, n) = (a.id(), va.numel());
    a.tape().push(Tensor::scalar(s), &[ia], move |g, sink| {
        if let Some(buf) = sink.buf(ia) {
            for d in buf.iter_mut().take(n) {
                *d += g[0];
            }
        }
    })
}

pub fn mean_all<'t, T: Scalar>(a: Var<'t, T>) -> Var<'t, T> {
    let n = a.value().numel().max(1);
    scale(sum_all(a), T::ONE / T::from_f64(n as f64))
}

/// Adds `bias[c]` to every element of channel `c` in an N×C×… tensor.
pub fn add_channel_bias<'t, T: Scalar>(x: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    x.same_tape(&bias)?;
    let (vx, vb) = (x.value(), bias.value());
    let shape = vx.shape().to_vec();
    contract!(
        shape.len() >= 2,
        "add_channel_bias: need rank ≥ 2, got {shape:?}"
    );
    let (n, c) = (shape[0], shape[1]);
    contract!(
        vb.shape() == [c],
        "add_channel_bias: bias shape {:?} does not match {c} channels",
        vb.shape()
    );
    let inner: usize = shape[2..].iter().product();
    let mut out = vx.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            let b = vb.data()[ci];
            for v in &mut out[base..base + inner] {
                *v += b;
            }
        }
    }
    let (ix, ib) = (x.id(), bias.id());
    Ok(x.tape()
        .push(Tensor::new(shape, out)?, &[ix, ib], move |g, sink| {
            sink.add(ix, g);
            if let Some(buf) = sink.buf(ib) {
                for ni in 0..n {
                    for (ci, d) in buf.iter_mut().enumerate() {
                        let base = (ni * c + ci) * inner;
                        let mut s = T::ZERO;
                        for &gi in &g[base..base + inner] {
                            s += gi;
                        }
                        *d += s;
                    }
                }
            }
        }))
}

/// Sum over the last two (spatial) axes: N×C×H×W → N×C.
pub fn spatial_sum<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    spatial_reduce(x, false)
}

/// Global average pooling over the last two axes: N×C×H×W → N×C.
pub fn global_average_pool<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    spatial_reduce(x, true)
}

fn spatial_reduce<'t, T: Scalar>(x: Var<'t, T>, mean: bool) -> Result<Var<'t, T>> {
    let vx = x.value();
    let shape = vx.shape();
    let (outer, hw) = spatial_split(shape, "spatial reduction")?;
    let factor = if mean {
        T::ONE / T::from_f64(hw as f64)
    } else {
        T::ONE
    };
    let out: Vec<T> = vx
        .data()
        .chunks(hw)
        .map(|plane| {
            let mut s = T::ZERO;
            for &v in plane {
                s += v;
            }
            s * factor
        })
        .collect();
    debug_assert_eq!(out.len(), outer);
    let ix = x.id();
    Ok(x.tape().push(
        Tensor::new(&shape[..shape.len() - 2], out)?,
        &[ix],
        move |g, sink| {
            if let Some(buf) = sink.buf(ix) {
                for (plane, &gi) in buf.chunks_mut(hw).zip(g) {
                    let v = gi * factor;
                    for d in plane {
                        *d += v;
                    }
                }
            }
        },
    ))
}

fn softmax_rows<T: Scalar>(data: &[T], row: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; data.len()];
    for (src, dst) in data.chunks(row).zip(out.chunks_mut(row)) {
        let mut m = src[0];
        for &v in src {
            m = m.max(v);
        }
        let mut z = T::ZERO;
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - m).exp();
            z += *d;
        }
        let inv = T::ONE / z;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    out
}

/// Row-wise softmax backward: dx = y ⊙ (g − ⟨g, y⟩).
fn softmax_rows_backward<T: Scalar>(y: &[T], g: &[T], row: usize, dx: &mut [T]) {
    for ((yr, gr), dr) in y.chunks(row).zip(g.chunks(row)).zip(dx.chunks_mut(row)) {
        let mut dot = T::ZERO;
        for (&yi, &gi) in yr.iter().zip(gr) {
            dot += yi * gi;
        }
        for ((d, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
            *d += yi * (gi - dot);
        }
    }
}

fn softmax_over<'t, T: Scalar>(x: Var<'t, T>, row: usize) -> Var<'t, T> {
    let vx = x.value();
    let y = Rc::new(Tensor::new(vx.shape(), softmax_rows(vx.data(), row)).expect("same numel"));
    let (ix, yv) = (x.id(), Rc::clone(&y));
    x.tape().push_shared(y, &[ix], move |g, sink| {
        if let Some(buf) = sink.buf(ix) {
            softmax_rows_backward(yv.data(), g, row, buf);
        }
    })
}

/// Softmax over the last two axes of each map (each H×W slice sums to 1).
pub fn spatial_softmax<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let (_, hw) = spatial_split(&shape, "spatial_softmax")?;
    x.value().ensure_finite("spatial_softmax input")?;
    Ok(softmax_over(x, hw))
}

/// Softmax over the last axis (class probabilities for N×C logits).
pub fn channel_softmax<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    contract!(!shape.is_empty(), "channel_softmax: scalar input");
    let row = *shape.last().unwrap();
    contract!(row > 0, "channel_softmax: empty last axis");
    x.value().ensure_finite("channel_softmax input")?;
    Ok(softmax_over(x, row))
}

/// Affine map of row vectors: `x (N×K) · w (K×C) + b (C)`.
pub fn linear<'t, T: Scalar>(x: Var<'t, T>, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    x.same_tape(&w)?;
    x.same_tape(&b)?;
    let (vx, vw, vb) = (x.value(), w.value(), b.value());
    contract!(
        vx.rank() == 2 && vw.rank() == 2,
        "linear: need x N×K and w K×C"
    );
    let (n, k, c) = (vx.shape()[0], vx.shape()[1], vw.shape()[1]);
    contract!(
        vw.shape()[0] == k,
        "linear: x has {k} features, w expects {}",
        vw.shape()[0]
    );
    contract!(
        vb.shape() == [c],
        "linear: bias shape {:?}, expected [{c}]",
        vb.shape()
    );
    let mut out = vec![T::ZERO; n * c];
    for row in out.chunks_mut(c) {
        row.copy_from_slice(vb.data());
    }
    matmul(n, k, c, vx.data(), false, vw.data(), false, &mut out, true);
    let (ix, iw, ib) = (x.id(), w.id(), b.id());
    Ok(x.tape()
        .push(Tensor::new([n, c], out)?, &[ix, iw, ib], move |g, sink| {
            if let Some(buf) = sink.buf(ix) {
                matmul(n, c, k, g, false, vw.data(), true, buf, true);
            }
            if let Some(buf) = sink.buf(iw) {
                matmul(k, n, c, vx.data(), true, g, false, buf, true);
            }
            if let Some(buf) = sink.buf(ib) {
                for row in g.chunks(c) {
                    for (d, &gi) in buf.iter_mut().zip(row) {
                        *d += gi;
                    }
                }
            }
        }))
}

/// Class activation maps: `M[n,c,i,j] = Σ_k w[k,c] · F[n,k,i,j]`.
pub fn class_activation<'t, T: Scalar>(features: Var<'t, T>, w: Var<'t, T>) -> Result<Var<'t, T>> {
    features.same_tape(&w)?;
    let (vf, vw) = (features.value(), w.value());
    contract!(
        vf.rank() == 4,
        "cam: features must be N×K×H×W, got {:?}",
        vf.shape()
    );
    contract!(
        vw.rank() == 2,
        "cam: weights must be K×C, got {:?}",
        vw.shape()
    );
    let (n, k, h, wd) = (vf.shape()[0], vf.shape()[1], vf.shape()[2], vf.shape()[3]);
    contract!(
        vw.shape()[0] == k,
        "cam: feature map has {k} channels, classifier expects {}",
        vw.shape()[0]
    );
    let c = vw.shape()[1];
    let hw = h * wd;
    let mut out = vec![T::ZERO; n * c * hw];
    for ni in 0..n {
        matmul(
            c,
            k,
            hw,
            vw.data(),
            true,
            &vf.data()[ni * k * hw..(ni + 1) * k * hw],
            false,
            &mut out[ni * c * hw..(ni + 1) * c * hw],
            false,
        );
    }
    let (i_f, iw) = (features.id(), w.id());
    Ok(features.tape().push(
        Tensor::new([n, c, h, wd], out)?,
        &[i_f, iw],
        move |g, sink| {
            if let Some(buf) = sink.buf(i_f) {
                for ni in 0..n {
                    matmul(
                        k,
                        c,
                        hw,
                        vw.data(),
                        false,
                        &g[ni * c * hw..(ni + 1) * c * hw],
                        false,
                        &mut buf[ni * k * hw..(ni + 1) * k * hw],
                        true,
                    );
                }
            }
            if let Some(buf) = sink.buf(iw) {
                for ni in 0..n {
                    matmul(
                        k,
                        hw,
                        c,
                        &vf.data()[ni * k * hw..(ni + 1) * k * hw],
                        false,
                        &g[ni * c * hw..(ni + 1) * c * hw],
                        true,
                        buf,
                        true,
                    );
                }
            }
        },
    ))
}
