//! Training objective: weighted cross-entropy on the self-attention head's
//! prediction plus a λ-weighted regularizer on the attention maps.
//!
//! In guidance mode the regularizer is a binary cross-entropy between the
//! input-resolution soft attention `M″` and the focus mask `S`, summed over
//! annotated pixels only and normalized by their count `N`. Pixels outside
//! the focus region are never pushed toward zero directly; the spatial
//! softmax already does that.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{add, Scalar, Tape, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::head::ForwardPass;

pub const DEFAULT_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceStyle {
    Scribble,
    Bbox,
    Segmentation,
}

impl GuidanceStyle {
    pub const ALL: [GuidanceStyle; 3] = [
        GuidanceStyle::Scribble,
        GuidanceStyle::Bbox,
        GuidanceStyle::Segmentation,
    ];
}

impl fmt::Display for GuidanceStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceStyle::Scribble => "scribble",
            GuidanceStyle::Bbox => "bbox",
            GuidanceStyle::Segmentation => "segmentation",
        })
    }
}

impl std::str::FromStr for GuidanceStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scribble" => Ok(GuidanceStyle::Scribble),
            "bbox" => Ok(GuidanceStyle::Bbox),
            "segmentation" => Ok(GuidanceStyle::Segmentation),
            other => Err(Error::Config(format!("unknown guidance style {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    #[default]
    Guidance,
    L1,
    L2,
    None,
}

/// Binary focus raster `S`, stored class-major (C×H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct FocusRegionMask {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
    pub style: GuidanceStyle,
    unified: bool,
}

impl FocusRegionMask {
    /// Same plane used as the target for every class.
    pub fn unified(
        plane: &[u8],
        height: usize,
        width: usize,
        classes: usize,
        style: GuidanceStyle,
    ) -> Result<Self> {
        contract!(
            plane.len() == height * width,
            "mask plane has {} values, expected {height}×{width}",
            plane.len()
        );
        let bin: Vec<u8> = plane.iter().map(|&v| u8::from(v != 0)).collect();
        Ok(Self {
            classes,
            height,
            width,
            data: bin.repeat(classes),
            style,
            unified: true,
        })
    }

    /// Independent plane per class.
    pub fn per_class(
        data: Vec<u8>,
        classes: usize,
        height: usize,
        width: usize,
        style: GuidanceStyle,
    ) -> Result<Self> {
        contract!(
            data.len() == classes * height * width,
            "mask has {} values, expected {classes}×{height}×{width}",
            data.len()
        );
        contract!(data.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        Ok(Self {
            classes,
            height,
            width,
            data,
            style,
            unified: false,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.classes, self.height, self.width]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn class_slice(&self, c: usize) -> &[u8] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn is_unified(&self) -> bool {
        self.unified
    }

    /// True when every class slice is identical.
    pub fn slices_equal(&self) -> bool {
        (1..self.classes).all(|c| self.class_slice(c) == self.class_slice(0))
    }

    pub fn annotated(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub mode: LossMode,
    pub class_weights: Option<Vec<f64>>,
    pub eps: f64,
    /// Reject guidance-mode samples that have no mask instead of skipping them.
    pub strict: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mode: LossMode::Guidance,
            class_weights: None,
            eps: DEFAULT_EPS,
            strict: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be a finite non-negative number, got {}",
                self.lambda
            )));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!(
                "eps must be in (0, 1), got {}",
                self.eps
            )));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != classes {
                return Err(Error::Config(format!(
                    "{} class weights for {classes} classes",
                    w.len()
                )));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Mean over the batch of `−w_n · ln clamp(p[n, y_n], eps, 1)`.
pub fn cross_entropy_batch<'t, T: Scalar>(
    probs: Var<'t, T>,
    labels: &[usize],
    weights: &[T],
    eps: T,
) -> Result<Var<'t, T>> {
    let vp = probs.value();
    contract!(
        vp.rank() == 2,
        "cross_entropy: probabilities must be N×C, got {:?}",
        vp.shape()
    );
    let (n, c) = (vp.shape()[0], vp.shape()[1]);
    contract!(
        labels.len() == n && weights.len() == n,
        "cross_entropy: {n} rows, {} labels, {} weights",
        labels.len(),
        weights.len()
    );
    contract!(
        labels.iter().all(|&l| l < c),
        "cross_entropy: label out of range for {c} classes"
    );
    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut total = T::ZERO;
    for (i, (&l, &w)) in labels.iter().zip(weights).enumerate() {
        let p = vp.data()[i * c + l];
        total -= w * p.max(eps).min(T::ONE).ln();
    }
    let labels = labels.to_vec();
    let weights = weights.to_vec();
    let ip = probs.id();
    Ok(probs
        .tape()
        .push(Tensor::scalar(total * inv_n), &[ip], move |g, sink| {
            if let Some(buf) = sink.buf(ip) {
                for (i, (&l, &w)) in labels.iter().zip(&weights).enumerate() {
                    let p = vp.data()[i * c + l];
                    if p > eps && p < T::ONE {
                        buf[i * c + l] -= g[0] * inv_n * w / p;
                    }
                }
            }
        }))
}

/// Mean over the batch of `(λ/N_n) Σ_{S≠0} −ln clamp(M″, eps, 1)`; samples
/// without a mask (or with an empty one) contribute zero.
pub fn guidance_batch<'t, T: Scalar>(
    target: Var<'t, T>,
    masks: &[Option<&FocusRegionMask>],
    lambda: T,
    eps: T,
) -> Result<Var<'t, T>> {
    let vt = target.value();
    contract!(
        vt.rank() == 4,
        "guidance: M″ must be N×C×H×W, got {:?}",
        vt.shape()
    );
    let n = vt.shape()[0];
    let per = [vt.shape()[1], vt.shape()[2], vt.shape()[3]];
    contract!(
        masks.len() == n,
        "guidance: {n} samples but {} masks",
        masks.len()
    );
    let inv_n = T::ONE / T::from_f64(n as f64);
    // (sample, annotated count, flat indices)
    let mut picks: Vec<(usize, T, Vec<usize>)> = Vec::new();
    let mut total = T::ZERO;
    for (i, m) in masks.iter().enumerate() {
        let Some(m) = m else { continue };
        contract!(
            m.shape() == per,
            "guidance: mask shape {:?} vs M″ slice {:?}",
            m.shape(),
            per
        );
        let idx: Vec<usize> = m
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(j, _)| j)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let count = T::from_f64(idx.len() as f64);
        let sample = vt.outer(i);
        let mut s = T::ZERO;
        for &j in &idx {
            s -= sample[j].max(eps).min(T::ONE).ln();
        }
        total += lambda * s / count;
        picks.push((i, count, idx));
    }
    let it = target.id();
    let stride = per.iter().product::<usize>();
    Ok(target
        .tape()
        .push(Tensor::scalar(total * inv_n), &[it], move |g, sink| {
            if let Some(buf) = sink.buf(it) {
                for (i, count, idx) in &picks {
                    let base = i * stride;
                    let coeff = g[0] * inv_n * lambda / *count;
                    for &j in idx {
                        let p = vt.data()[base + j];
                        if p > eps && p < T::ONE {
                            buf[base + j] -= coeff / p;
                        }
                    }
                }
            }
        }))
}

/// `λ/N · Σ |x|^p` over a batch of pre-softmax maps, `p ∈ {1, 2}`.
pub fn norm_regularizer_batch<'t, T: Scalar>(
    maps: Var<'t, T>,
    lambda: T,
    p: u32,
) -> Result<Var<'t, T>> {
    contract!(
        p == 1 || p == 2,
        "norm regularizer: p must be 1 or 2, got {p}"
    );
    let vm = maps.value();
    let n = vm.shape().first().copied().unwrap_or(1).max(1);
    let inv_n = T::ONE / T::from_f64(n as f64);
    let mut total = T::ZERO;
    for &x in vm.data() {
        total += if p == 1 { x.abs() } else { x * x };
    }
    let im = maps.id();
    Ok(maps.tape().push(
        Tensor::scalar(lambda * total * inv_n),
        &[im],
        move |g, sink| {
            if let Some(buf) = sink.buf(im) {
                let c = g[0] * lambda * inv_n;
                for (d, &x) in buf.iter_mut().zip(vm.data()) {
                    *d += if p == 1 {
                        if x > T::ZERO {
                            c
                        } else if x < T::ZERO {
                            -c
                        } else {
                            T::ZERO
                        }
                    } else {
                        c * T::from_f64(2.0) * x
                    };
                }
            }
        },
    ))
}

/// Scalar loss plus its individual terms for diagnostics.
pub struct LossOutput<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub classification: T,
    pub regularizer: T,
}

/// Composite objective on a batched forward pass.
pub fn total_loss<'t, T: Scalar>(
    pass: &ForwardPass<'t, T>,
    labels: &[usize],
    masks: &[Option<&FocusRegionMask>],
    config: &LossConfig,
) -> Result<LossOutput<'t, T>> {
    let probs = pass.head.probs;
    let c = probs.shape()[1];
    config.validate(c)?;
    let weights: Vec<T> = labels
        .iter()
        .map(|&l| {
            T::from_f64(
                config
                    .class_weights
                    .as_ref()
                    .map_or(1.0, |w| w.get(l).copied().unwrap_or(1.0)),
            )
        })
        .collect();
    let eps = T::from_f64(config.eps);
    let ce = cross_entropy_batch(probs, labels, &weights, eps)?;
    let lambda = T::from_f64(config.lambda);
    let reg = match config.mode {
        LossMode::None => None,
        LossMode::Guidance => {
            if config.strict {
                contract!(
                    masks.iter().all(Option::is_some),
                    "strict guidance: a sample has no focus mask"
                );
            }
            let target = pass.target.ok_or_else(|| {
                Error::Contract("guidance loss needs M″ in the forward pass".into())
            })?;
            Some(guidance_batch(target, masks, lambda, eps)?)
        }
        LossMode::L1 | LossMode::L2 => {
            let up = pass.upsampled.ok_or_else(|| {
                Error::Contract("norm regularizer needs g(M + b) in the forward pass".into())
            })?;
            let p = if config.mode == LossMode::L1 { 1 } else { 2 };
            Some(norm_regularizer_batch(up, lambda, p)?)
        }
    };
    let classification = ce.item();
    match reg {
        Some(r) => Ok(LossOutput {
            regularizer: r.item(),
            total: add(ce, r)?,
            classification,
        }),
        None => Ok(LossOutput {
            total: ce,
            classification,
            regularizer: T::ZERO,
        }),
    }
}

/// `−weight · Σ_c q_c ln clamp(p_c, eps, 1)` for one sample.
pub fn cross_entropy(probs: &[f64], one_hot: &[f64], weight: f64, eps: f64) -> Result<f64> {
    contract!(
        probs.len() == one_hot.len(),
        "cross_entropy: {} probabilities vs {} targets",
        probs.len(),
        one_hot.len()
    );
    let ones = one_hot.iter().filter(|&&v| v == 1.0).count();
    let zeros = one_hot.iter().filter(|&&v| v == 0.0).count();
    contract!(
        ones == 1 && ones + zeros == one_hot.len(),
        "cross_entropy: target is not one-hot"
    );
    let label = one_hot.iter().position(|&v| v == 1.0).unwrap();
    let tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::new([1, probs.len()], probs.to_vec())?)?;
    Ok(cross_entropy_batch(p, &[label], &[weight], eps)?.item())
}

/// Guidance term for one sample's `M″` (C×H×W).
pub fn guidance_term(
    target: &Tensor<f64>,
    mask: &FocusRegionMask,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    contract!(
        target.shape() == mask.shape(),
        "guidance: M″ shape {:?} vs mask {:?}",
        target.shape(),
        mask.shape()
    );
    let tape = Tape::<f64>::new();
    let mut shape = vec![1];
    shape.extend_from_slice(target.shape());
    let t = tape.constant(target.clone().reshape(shape)?)?;
    Ok(guidance_batch(t, &[Some(mask)], lambda, eps)?.item())
}

/// `λ · Σ |x|^p` over a set of upsampled maps.
pub fn norm_regularizer(maps: &Tensor<f64>, lambda: f64, p: u32) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let mut shape = vec![1];
    shape.extend_from_slice(maps.shape());
    let t = tape.constant(maps.clone().reshape(shape)?)?;
    Ok(norm_regularizer_batch(t, lambda, p)?.item())
}

/// Inverse-frequency class weights `total / (C · count_c)`.
pub fn class_weights_from(counts: &[usize], class_names: &[String]) -> Result<Vec<f64>> {
    contract!(!counts.is_empty(), "class_weights_from: no classes");
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        let name = class_names
            .get(empty)
            .cloned()
            .unwrap_or_else(|| format!("class {empty}"));
        return Err(Error::Config(format!(
            "class {name} has no training samples"
        )));
    }
    let total: usize = counts.iter().sum();
    let c = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&n| total as f64 / (c * n as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_examples() {
        assert_eq!(
            cross_entropy(&[0.0, 1.0], &[0.0, 1.0], 1.0, DEFAULT_EPS).unwrap(),
            0.0
        );
        let u = cross_entropy(&[0.25; 4], &[0.0, 0.0, 1.0, 0.0], 1.0, DEFAULT_EPS).unwrap();
        assert!((u - 4f64.ln()).abs() < 1e-12);
        assert!((u - 1.3863).abs() < 1e-4);
        let p = [0.1, 0.7, 0.2];
        let q = [0.0, 0.0, 1.0];
        let one = cross_entropy(&p, &q, 1.0, DEFAULT_EPS).unwrap();
        let two = cross_entropy(&p, &q, 2.0, DEFAULT_EPS).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-15);
    }

    #[test]
    fn ce_rejects_soft_targets() {
        assert!(cross_entropy(&[0.5, 0.5], &[0.5, 0.5], 1.0, DEFAULT_EPS).is_err());
        assert!(cross_entropy(&[0.5, 0.5], &[1.0, 1.0], 1.0, DEFAULT_EPS).is_err());
    }

    fn mask1(plane: &[u8], h: usize, w: usize) -> FocusRegionMask {
        FocusRegionMask::unified(plane, h, w, 1, GuidanceStyle::Segmentation).unwrap()
    }

    #[test]
    fn guidance_empty_mask_is_zero() {
        let t = Tensor::full([1, 2, 2], 0.25);
        assert_eq!(
            guidance_term(&t, &mask1(&[0; 4], 2, 2), 3.0, DEFAULT_EPS).unwrap(),
            0.0
        );
    }

    #[test]
    fn guidance_single_pixel_half() {
        let t = Tensor::from_f64([1, 1, 2], &[0.5, 0.5]).unwrap();
        let v = guidance_term(&t, &mask1(&[1, 0], 1, 2), 1.0, DEFAULT_EPS).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn guidance_shape_mismatch() {
        let t = Tensor::full([1, 2, 2], 0.25);
        assert!(guidance_term(&t, &mask1(&[1; 6], 2, 3), 1.0, DEFAULT_EPS).is_err());
    }

    #[test]
    fn norm_examples() {
        let z = Tensor::zeros([1, 2, 2]);
        assert_eq!(norm_regularizer(&z, 1.0, 1).unwrap(), 0.0);
        let one = Tensor::from_f64([1, 1, 1], &[3.0]).unwrap();
        assert_eq!(norm_regularizer(&one, 1.0, 1).unwrap(), 3.0);
        assert_eq!(norm_regularizer(&one, 1.0, 2).unwrap(), 9.0);
        let tiny = norm_regularizer(&one, 1e-8, 2).unwrap();
        assert!((tiny - 9e-8).abs() < 1e-20);
        assert!(norm_regularizer(&one, 1.0, 3).is_err());
    }

    #[test]
    fn class_weight_examples() {
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            class_weights_from(&[10, 10, 10, 10], &names).unwrap(),
            vec![1.0; 4]
        );
        let w = class_weights_from(&[50, 187, 39, 406], &names).unwrap();
        let expect = [3.41, 0.912, 4.372, 0.420];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        let doubled = class_weights_from(&[100, 374, 78, 812], &names).unwrap();
        assert_eq!(w, doubled);
        let err = class_weights_from(&[5, 0, 1, 1], &names).unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");
    }

    #[test]
    fn unified_mask_slices_match() {
        let m = FocusRegionMask::unified(&[0, 3, 1, 0], 2, 2, 3, GuidanceStyle::Bbox).unwrap();
        assert!(m.is_unified() && m.slices_equal());
        assert_eq!(m.class_slice(2), &[0, 1, 1, 0]);
        assert_eq!(m.annotated(), 6);
    }
}
