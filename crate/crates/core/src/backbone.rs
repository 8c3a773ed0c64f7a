//! Small residual CNN producing the last convolutional feature map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{add, conv2d, group_count, group_norm, maxpool2d, relu, Scalar, Tensor, Var};
use crate::checkpoint::ParamStore;
use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub stem_stride: usize,
    /// Adds a 2×2 max pool after the stem, doubling the downsample factor.
    pub stem_pool: bool,
    /// Zero-initializes the scale of each block's last normalization so every
    /// residual block starts as its shortcut.
    pub identity_init: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 16,
            stages: 4,
            blocks_per_stage: 2,
            stem_stride: 2,
            stem_pool: false,
            identity_init: false,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("backbone: {m}")));
        if self.in_channels == 0 {
            return bad("in_channels must be ≥ 1");
        }
        if self.base_channels == 0 {
            return bad("base_channels must be ≥ 1");
        }
        if self.stages == 0 || self.stages > 8 {
            return bad("stages must be in 1..=8");
        }
        if self.blocks_per_stage == 0 {
            return bad("blocks_per_stage must be ≥ 1");
        }
        if self.stem_stride == 0 {
            return bad("stem_stride must be ≥ 1");
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        let pool = if self.stem_pool { 2 } else { 1 };
        (self.stem_stride * pool) << self.stages
    }

    /// Channel count K of the final feature map.
    pub fn out_channels(&self) -> usize {
        self.base_channels << (self.stages - 1)
    }

    /// Spatial size of the feature map for a square `input` image.
    pub fn feature_size(&self, input: usize) -> Result<usize> {
        let f = self.downsample_factor();
        contract!(
            input.is_multiple_of(f) && input >= f,
            "input size {input} not divisible by downsample factor {f}"
        );
        Ok(input / f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

/// Backbone plus the classifier weights `W (K×C)` and bias `b (C)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub backbone: BackboneConfig,
    pub classes: usize,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

impl Network {
    pub fn new(backbone: BackboneConfig, classes: usize) -> Result<Self> {
        backbone.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        Ok(Self { backbone, classes })
    }

    fn specs(&self) -> Vec<Spec> {
        let cfg = &self.backbone;
        let mut specs = Vec::new();
        let conv = |specs: &mut Vec<Spec>, name: String, o: usize, i: usize, k: usize| {
            specs.push(Spec {
                name: format!("{name}.weight"),
                shape: vec![o, i, k, k],
                init: Init::HeNormal { fan_in: i * k * k },
            });
        };
        let norm = |specs: &mut Vec<Spec>, name: String, c: usize, zero_scale: bool| {
            specs.push(Spec {
                name: format!("{name}.gamma"),
                shape: vec![c],
                init: if zero_scale { Init::Zeros } else { Init::Ones },
            });
            specs.push(Spec {
                name: format!("{name}.beta"),
                shape: vec![c],
                init: Init::Zeros,
            });
        };
        conv(
            &mut specs,
            "stem.conv".into(),
            cfg.base_channels,
            cfg.in_channels,
            3,
        );
        norm(&mut specs, "stem.norm".into(), cfg.base_channels, false);
        let mut in_ch = cfg.base_channels;
        for s in 0..cfg.stages {
            let out_ch = cfg.base_channels << s;
            for b in 0..cfg.blocks_per_stage {
                let p = format!("stage{s}.block{b}");
                conv(&mut specs, format!("{p}.conv1"), out_ch, in_ch, 3);
                norm(&mut specs, format!("{p}.norm1"), out_ch, false);
                conv(&mut specs, format!("{p}.conv2"), out_ch, out_ch, 3);
                norm(&mut specs, format!("{p}.norm2"), out_ch, cfg.identity_init);
                if b == 0 {
                    conv(&mut specs, format!("{p}.proj"), out_ch, in_ch, 1);
                    norm(&mut specs, format!("{p}.proj_norm"), out_ch, false);
                }
                in_ch = out_ch;
            }
        }
        let k = cfg.out_channels();
        specs.push(Spec {
            name: "head.weight".into(),
            shape: vec![k, self.classes],
            init: Init::HeNormal { fan_in: k },
        });
        specs.push(Spec {
            name: "head.bias".into(),
            shape: vec![self.classes],
            init: Init::Zeros,
        });
        specs
    }

    pub fn param_names(&self) -> Vec<String> {
        self.specs().into_iter().map(|s| s.name).collect()
    }

    /// Fan-in scaled normal weights, unit/zero normalization affines and zero
    /// biases, drawn from one seeded stream in parameter order.
    pub fn init_weights(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in self.specs() {
            let numel: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::HeNormal { fan_in } => {
                    let normal =
                        Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    (0..numel).map(|_| normal.sample(&mut rng) as f32).collect()
                }
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
            };
            store
                .push(
                    spec.name,
                    Tensor::new(spec.shape, data).expect("spec shape"),
                )
                .expect("unique names");
        }
        store
    }

    /// Checks that a loaded parameter set matches this architecture.
    pub fn check_params(&self, store: &ParamStore) -> Result<()> {
        let specs = self.specs();
        contract!(
            specs.len() == store.len(),
            "checkpoint has {} tensors, architecture needs {}",
            store.len(),
            specs.len()
        );
        for (spec, (name, t)) in specs.iter().zip(store.iter()) {
            contract!(
                spec.name == name && spec.shape == t.shape(),
                "checkpoint tensor {name} {:?} does not match expected {} {:?}",
                t.shape(),
                spec.name,
                spec.shape
            );
        }
        Ok(())
    }

    /// Runs the backbone on N×C×H×W images, returning F (N×K×H′×W′).
    ///
    /// `params` must be the full parameter list in [`Network::param_names`]
    /// order; the trailing head parameters are ignored here.
    pub fn features<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
        images: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let cfg = &self.backbone;
        let shape = images.shape();
        contract!(
            shape.len() == 4,
            "backbone input must be NCHW, got {shape:?}"
        );
        contract!(
            shape[1] == cfg.in_channels,
            "backbone expects {} input channels, got {}",
            cfg.in_channels,
            shape[1]
        );
        let f = cfg.downsample_factor();
        contract!(
            shape[2].is_multiple_of(f) && shape[3].is_multiple_of(f) && shape[2] >= f && shape[3] >= f,
            "input {}×{} not divisible by downsample factor {f}",
            shape[2],
            shape[3]
        );
        contract!(
            params.len() == self.specs().len(),
            "expected {} parameters, got {}",
            self.specs().len(),
            params.len()
        );
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter count checked");

        let norm = |x: Var<'t, T>, gamma: Var<'t, T>, beta: Var<'t, T>| {
            let c = x.shape()[1];
            group_norm(x, gamma, beta, group_count(c))
        };

        let (w, g, b) = (take(), take(), take());
        let mut x = relu(norm(conv2d(images, w, cfg.stem_stride, 1)?, g, b)?);
        if cfg.stem_pool {
            x = maxpool2d(x, 2, 2)?;
        }
        for _ in 0..cfg.stages {
            for blk in 0..cfg.blocks_per_stage {
                let stride = if blk == 0 { 2 } else { 1 };
                let (w1, g1, b1) = (take(), take(), take());
                let (w2, g2, b2) = (take(), take(), take());
                let h = relu(norm(conv2d(x, w1, stride, 1)?, g1, b1)?);
                let h = norm(conv2d(h, w2, 1, 1)?, g2, b2)?;
                let shortcut = if blk == 0 {
                    let (wp, gp, bp) = (take(), take(), take());
                    norm(conv2d(x, wp, stride, 0)?, gp, bp)?
                } else {
                    x
                };
                x = relu(add(shortcut, h)?);
            }
        }
        Ok(x)
    }

    /// Classifier `(W, b)` from the full parameter list.
    pub fn head_params<'t, T: Scalar>(
        &self,
        params: &[Var<'t, T>],
    ) -> (Var<'t, T>, Var<'t, T>) {
        let n = params.len();
        (params[n - 2], params[n - 1])
    }
}
