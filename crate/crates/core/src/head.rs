//! Classification heads on top of the feature map F.
//!
//! * GAP baseline: `f = mean(F)`, `z = Wᵀf + b`, `p = softmax(z)`.
//! * Class activation maps: `M_c = Σ_k W_kc F_k`, so `mean(M_c) + b_c = z_c`.
//! * Soft-attention target: `M″_c = spatial_softmax(g(M_c + b_c))` at input
//!   resolution, with `g` the bicubic upsampler.
//! * Spatial self-attention head: `A_c = spatial_softmax(M_c + b_c)`,
//!   `M′_c = A_c ⊙ (M_c + b_c)`, `z′_c = Σ M′_c`, `p′ = softmax(z′)`.
//!
//! The bias `b_c` is broadcast over every spatial position. Adding it before
//! or after `g` is equivalent because `g` is linear and preserves constants.

use crate::autodiff::{
    add_channel_bias, bicubic_upsample, channel_softmax, class_activation, global_average_pool,
    linear, mul, spatial_softmax, spatial_sum, Scalar, Tape, Tensor, Var,
};
use crate::error::{contract, Result};

/// Classifier weights `W (K×C)` and bias `b (C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T: Scalar> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        contract!(
            weight.rank() == 2,
            "head weight must be K×C, got {:?}",
            weight.shape()
        );
        let c = weight.shape()[1];
        contract!(c >= 2, "head needs at least 2 classes, got {c}");
        contract!(
            bias.shape() == [c],
            "head bias shape {:?} does not match {c} classes",
            bias.shape()
        );
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn classes(&self) -> usize {
        self.bias.numel()
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Records `W` and `b` on a tape as tracked leaves.
    pub fn record<'t>(&self, tape: &'t Tape<T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        Ok((
            tape.param(self.weight.clone())?,
            tape.param(self.bias.clone())?,
        ))
    }
}

pub struct GapOutputs<'t, T: Scalar> {
    pub pooled: Var<'t, T>,
    pub logits: Var<'t, T>,
    pub probs: Var<'t, T>,
}

/// GAP baseline head: pooled encoding, logits and probabilities.
pub fn gap_head<'t, T: Scalar>(
    features: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<GapOutputs<'t, T>> {
    let pooled = global_average_pool(features)?;
    let logits = linear(pooled, w, b)?;
    let probs = channel_softmax(logits)?;
    Ok(GapOutputs {
        pooled,
        logits,
        probs,
    })
}

/// Raw class activation maps `M` (N×C×H′×W′).
pub fn cam<'t, T: Scalar>(features: Var<'t, T>, w: Var<'t, T>) -> Result<Var<'t, T>> {
    class_activation(features, w)
}

/// `g(M + b)` at input resolution, before the spatial softmax.
pub fn upsampled_logit_maps<'t, T: Scalar>(
    maps: Var<'t, T>,
    b: Var<'t, T>,
    input_h: usize,
    input_w: usize,
) -> Result<Var<'t, T>> {
    bicubic_upsample(add_channel_bias(maps, b)?, input_h, input_w)
}

/// Input-resolution soft attention `M″` (each class slice sums to 1).
pub fn soft_attention_target<'t, T: Scalar>(
    maps: Var<'t, T>,
    b: Var<'t, T>,
    input_h: usize,
    input_w: usize,
) -> Result<Var<'t, T>> {
    spatial_softmax(upsampled_logit_maps(maps, b, input_h, input_w)?)
}

pub struct SelfAttentionOutputs<'t, T: Scalar> {
    pub weights: Var<'t, T>,
    pub attended: Var<'t, T>,
    pub logits: Var<'t, T>,
    pub probs: Var<'t, T>,
}

/// Spatial self-attention head replacing GAP.
pub fn self_attention_head<'t, T: Scalar>(
    maps: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<SelfAttentionOutputs<'t, T>> {
    maps.value().ensure_finite("class activation maps")?;
    let shifted = add_channel_bias(maps, b)?;
    let weights = spatial_softmax(shifted)?;
    let attended = mul(weights, shifted)?;
    let logits = spatial_sum(attended)?;
    let probs = channel_softmax(logits)?;
    Ok(SelfAttentionOutputs {
        weights,
        attended,
        logits,
        probs,
    })
}

/// Everything one forward pass produces for a batch.
pub struct ForwardPass<'t, T: Scalar> {
    pub features: Var<'t, T>,
    pub cam: Var<'t, T>,
    pub head: SelfAttentionOutputs<'t, T>,
    /// `g(M + b)`, present when requested.
    pub upsampled: Option<Var<'t, T>>,
    /// `M″`, present when requested.
    pub target: Option<Var<'t, T>>,
}

/// Composes CAM, the self-attention head and (optionally) the soft-attention
/// target on top of a feature map.
pub fn attend<'t, T: Scalar>(
    features: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
    input_hw: Option<(usize, usize)>,
) -> Result<ForwardPass<'t, T>> {
    let maps = cam(features, w)?;
    let head = self_attention_head(maps, b)?;
    let (upsampled, target) = match input_hw {
        Some((h, wd)) => {
            let up = upsampled_logit_maps(maps, b, h, wd)?;
            (Some(up), Some(spatial_softmax(up)?))
        }
        None => (None, None),
    };
    Ok(ForwardPass {
        features,
        cam: maps,
        head,
        upsampled,
        target,
    })
}

/// Per-sample record of `M`, `M′`, `M″`, `z′` and `p′`.
///
/// Maps are stored class-major (C×H×W) so each class slice is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle {
    pub cam: Tensor<f32>,
    pub attended: Tensor<f32>,
    pub target: Tensor<f32>,
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
}

impl AttentionBundle {
    /// Extracts sample `n` from a batched forward pass that computed `M″`.
    pub fn from_pass<T: Scalar>(pass: &ForwardPass<'_, T>, n: usize) -> Result<Self> {
        let target = pass
            .target
            .as_ref()
            .ok_or_else(|| crate::Error::Contract("forward pass did not compute M″".into()))?;
        let slice = |v: &Var<'_, T>| -> Result<Tensor<f32>> {
            let t = v.value();
            let shape = t.shape()[1..].to_vec();
            Tensor::new(
                shape,
                t.outer(n).iter().map(|x| x.to_f64() as f32).collect(),
            )
        };
        let row = |v: &Var<'_, T>| -> Vec<f32> {
            v.value()
                .outer(n)
                .iter()
                .map(|x| x.to_f64() as f32)
                .collect()
        };
        Ok(Self {
            cam: slice(&pass.cam)?,
            attended: slice(&pass.head.attended)?,
            target: slice(target)?,
            logits: row(&pass.head.logits),
            probs: row(&pass.head.probs),
        })
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn cam_slice(&self, c: usize) -> &[f32] {
        self.cam.outer(c)
    }

    pub fn attended_slice(&self, c: usize) -> &[f32] {
        self.attended.outer(c)
    }

    pub fn target_slice(&self, c: usize) -> &[f32] {
        self.target.outer(c)
    }

    /// Arg-max class, ties broken toward the lowest index.
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
