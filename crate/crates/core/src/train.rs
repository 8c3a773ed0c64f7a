//! Training loop, evaluation metrics and the trained-model handle.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, OptimizerState, Tape, Tensor, Var};
use crate::backbone::{BackboneConfig, Network};
use crate::checkpoint::ParamStore;
use crate::data::{
    augment, mask_to_bbox, mask_to_scribble, warp_image, warp_mask, AugmentDraw, AugmentParams,
    Image, Mask, Sample,
};
use crate::error::{contract, Error, Result};
use crate::head::{argmax, attend, AttentionBundle};
use crate::loss::{
    class_weights_from, total_loss, FocusRegionMask, GuidanceStyle, LossConfig, LossMode,
};

const EVAL_BATCH: usize = 16;
const SHUFFLE_SALT: u64 = 0x5348_5546;
const AUGMENT_SALT: u64 = 0x4155_4755;

/// Annotation style used to build focus masks, or none at all.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleChoice {
    Scribble,
    Bbox,
    #[default]
    Segmentation,
    None,
}

impl StyleChoice {
    pub fn style(self) -> Option<GuidanceStyle> {
        match self {
            StyleChoice::Scribble => Some(GuidanceStyle::Scribble),
            StyleChoice::Bbox => Some(GuidanceStyle::Bbox),
            StyleChoice::Segmentation => Some(GuidanceStyle::Segmentation),
            StyleChoice::None => None,
        }
    }
}

impl std::fmt::Display for StyleChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.style() {
            Some(s) => s.fmt(f),
            None => f.write_str("none"),
        }
    }
}

impl std::str::FromStr for StyleChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(StyleChoice::None);
        }
        Ok(match s.parse::<GuidanceStyle>()? {
            GuidanceStyle::Scribble => StyleChoice::Scribble,
            GuidanceStyle::Bbox => StyleChoice::Bbox,
            GuidanceStyle::Segmentation => StyleChoice::Segmentation,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub guidance_style: StyleChoice,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub backbone: BackboneConfig,
    /// Square side the network sees; images are resized to it.
    pub input_size: usize,
    pub augment: bool,
    pub augment_params: AugmentParams,
    /// Scribble width in pixels (1 = plain skeleton).
    pub scribble_width: usize,
    /// Weight classes by `total / (C · count_c)`.
    pub balance_classes: bool,
    /// Fail on guidance-mode samples without a mask instead of skipping them.
    pub strict: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr_start: 1e-3,
            lr_end: 1e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 8,
            lambda: 1.0,
            guidance_style: StyleChoice::Segmentation,
            loss_mode: LossMode::Guidance,
            seed: 0,
            backbone: BackboneConfig::default(),
            input_size: 128,
            augment: true,
            augment_params: AugmentParams::default(),
            scribble_width: 1,
            balance_classes: true,
            strict: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "need lr_start ≥ lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
        {
            return bad("momentum must be in [0,1) and weight_decay non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.scribble_width == 0 {
            return bad("scribble_width must be ≥ 1".into());
        }
        self.backbone.validate()?;
        self.augment_params.validate()?;
        self.loss_config(None).validate(2)?;
        let f = self.backbone.downsample_factor();
        if self.input_size == 0 || !self.input_size.is_multiple_of(f) {
            return bad(format!(
                "input_size {} must be a positive multiple of the downsample factor {f}",
                self.input_size
            ));
        }
        if self.input_size / f < 2 {
            return bad(format!(
                "input_size {} leaves a feature map smaller than 2×2",
                self.input_size
            ));
        }
        Ok(())
    }

    pub fn loss_config(&self, class_weights: Option<Vec<f64>>) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            mode: self.loss_mode,
            class_weights,
            strict: self.strict,
            ..Default::default()
        }
    }

    fn focus_style(&self) -> Option<GuidanceStyle> {
        if self.loss_mode == LossMode::Guidance {
            self.guidance_style.style()
        } else {
            None
        }
    }
}

/// Linearly decayed learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    contract!(
        epoch < cfg.epochs,
        "epoch {epoch} out of range for {} epochs",
        cfg.epochs
    );
    if cfg.epochs == 1 {
        return Ok(cfg.lr_start);
    }
    // convex-combination form lands exactly on both endpoints
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.lr_start * (1.0 - t) + cfg.lr_end * t)
}

/// Resizes an image (and mask) to the square network input.
pub fn prepare(image: &Image, mask: Option<&Mask>, size: usize) -> (Image, Option<Mask>) {
    if image.height == size && image.width == size {
        return (image.clone(), mask.cloned());
    }
    (
        warp_image(image, &AugmentDraw::IDENTITY, size),
        mask.map(|m| warp_mask(m, &AugmentDraw::IDENTITY, size)),
    )
}

fn styled_mask(mask: &Mask, style: GuidanceStyle, width: usize) -> Result<Option<Mask>> {
    if mask.is_empty() {
        return Ok(None);
    }
    Ok(Some(match style {
        GuidanceStyle::Segmentation => mask.clone(),
        GuidanceStyle::Bbox => mask_to_bbox(mask)?,
        GuidanceStyle::Scribble => mask_to_scribble(mask, width)?,
    }))
}

fn batch_tensor(images: &[Image], size: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for im in images {
        contract!(
            im.height == size && im.width == size,
            "batch image {}×{} vs input {size}",
            im.height,
            im.width
        );
        data.extend_from_slice(&im.data);
    }
    Tensor::new([images.len(), 1, size, size], data)
}

/// Trained network, its parameters and the input size it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub network: Network,
    pub params: ParamStore,
    pub input_size: usize,
}

impl Model {
    pub fn init(
        backbone: BackboneConfig,
        classes: usize,
        input_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let network = Network::new(backbone, classes)?;
        network.backbone.feature_size(input_size)?;
        let params = network.init_weights(seed);
        Ok(Self {
            network,
            params,
            input_size,
        })
    }

    pub fn classes(&self) -> usize {
        self.network.classes
    }

    /// Per-image CAM, attended maps, `M″` and predictions. Images must
    /// already be at the input size.
    pub fn attention(&self, images: &[Image]) -> Result<Vec<AttentionBundle>> {
        let s = self.input_size;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_BATCH) {
            let tape = Tape::<f32>::new();
            let vars = self
                .params
                .tensors()
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect::<Result<Vec<_>>>()?;
            let x = tape.constant(batch_tensor(chunk, s)?)?;
            let feats = self.network.features(&vars, x)?;
            let (w, b) = self.network.head_params(&vars);
            let pass = attend(feats, w, b, Some((s, s)))?;
            for n in 0..chunk.len() {
                out.push(AttentionBundle::from_pass(&pass, n)?);
            }
        }
        Ok(out)
    }
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Trains from scratch on `samples`. Deterministic given the config and
/// sample order.
pub fn train(
    cfg: &TrainConfig,
    samples: &[Sample],
    class_names: &[String],
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    contract!(!samples.is_empty(), "training set is empty");
    let classes = class_names.len();
    for s in samples {
        s.validate(classes)?;
    }
    let mut model = Model::init(cfg.backbone.clone(), classes, cfg.input_size, cfg.seed)?;
    let size = cfg.input_size;

    let style = cfg.focus_style();
    let masks: Vec<Option<Mask>> = samples
        .iter()
        .map(|s| match (style, &s.mask) {
            (Some(st), Some(m)) => styled_mask(m, st, cfg.scribble_width),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    // without augmentation every epoch sees the same resized inputs
    let fixed: Option<Vec<(Image, Option<Mask>)>> = (!cfg.augment).then(|| {
        samples
            .iter()
            .zip(&masks)
            .map(|(s, m)| prepare(&s.image, m.as_ref(), size))
            .collect()
    });

    let weights = if cfg.balance_classes {
        let mut counts = vec![0usize; classes];
        for s in samples {
            counts[s.label] += 1;
        }
        Some(class_weights_from(&counts, class_names)?)
    } else {
        None
    };
    let loss_cfg = cfg.loss_config(weights);
    loss_cfg.validate(classes)?;
    let needs_maps = cfg.loss_mode != LossMode::None;

    let mut state = OptimizerState::new(
        model.params.tensors(),
        cfg.momentum as f32,
        cfg.weight_decay as f32,
        0.0,
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        state.current_lr = lr_at(epoch, cfg)? as f32;
        let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);
        let mut epoch_sum = 0.0;

        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(batch.len());
            let mut focus = Vec::with_capacity(batch.len());
            for &i in batch {
                let (img, m) = match &fixed {
                    Some(f) => f[i].clone(),
                    None => {
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUGMENT_SALT);
                        rng.set_stream(((epoch as u64) << 32) | i as u64);
                        augment(
                            &samples[i].image,
                            masks[i].as_ref(),
                            &cfg.augment_params,
                            size,
                            &mut rng,
                        )
                    }
                };
                images.push(img);
                focus.push(match (m, style) {
                    (Some(m), Some(st)) if !m.is_empty() => {
                        Some(FocusRegionMask::unified(&m.data, size, size, classes, st)?)
                    }
                    _ => None,
                });
            }
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();

            let tape = Tape::<f32>::new();
            let vars: Vec<Var<'_, f32>> = model
                .params
                .tensors()
                .iter()
                .map(|t| tape.param(t.clone()))
                .collect::<Result<_>>()?;
            let x = tape.constant(batch_tensor(&images, size)?)?;
            let feats = model.network.features(&vars, x)?;
            let (w, b) = model.network.head_params(&vars);
            let pass = attend(feats, w, b, needs_maps.then_some((size, size)))?;
            let refs: Vec<Option<&FocusRegionMask>> = focus.iter().map(Option::as_ref).collect();
            let loss = total_loss(&pass, &labels, &refs, &loss_cfg)?;
            let value = loss.total.item();
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}: classification {}, regularizer {}",
                    loss.classification, loss.regularizer
                )));
            }
            let mut grads = tape.backward(loss.total).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {bi}: {m}")),
                other => other,
            })?;
            let grads: Vec<Tensor<f32>> = vars.iter().map(|&v| grads.take(v)).collect();
            sgd_step(model.params.tensors_mut(), &grads, &mut state)?;
            epoch_sum += value as f64 * batch.len() as f64;
        }
        log.epoch_loss.push(epoch_sum / samples.len() as f64);
    }
    Ok((model, log))
}

/// Evaluation summary written as the metrics JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub image_acc: f64,
    pub study_acc: f64,
    /// `null` for classes absent from the evaluated split.
    pub per_class_acc: Vec<Option<f64>>,
    /// `null` when no evaluated sample has a mask.
    pub attention_mass: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    /// `null` unless timing was requested; timing breaks byte-stable output.
    pub wall_time_s: Option<f64>,
}

/// Study-wise accuracy: average the per-view probabilities of each study and
/// take the arg-max (ties toward the lowest class).
pub fn study_accuracy(study_ids: &[&str], labels: &[usize], probs: &[Vec<f32>]) -> f64 {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for ((&id, &label), p) in study_ids.iter().zip(labels).zip(probs) {
        let g = *index.entry(id).or_insert_with(|| {
            groups.push((label, vec![0.0; p.len()], 0));
            groups.len() - 1
        });
        let (_, sum, count) = &mut groups[g];
        for (s, &v) in sum.iter_mut().zip(p) {
            *s += v as f64;
        }
        *count += 1;
    }
    if groups.is_empty() {
        return 0.0;
    }
    let correct = groups
        .iter()
        .filter(|(label, sum, count)| {
            let mean: Vec<f32> = sum.iter().map(|s| (s / *count as f64) as f32).collect();
            argmax(&mean) == *label
        })
        .count();
    correct as f64 / groups.len() as f64
}

/// Sum of the predicted class's `M″` over the mask pixels.
pub fn attention_in_mask(bundle: &AttentionBundle, mask: &Mask) -> f64 {
    bundle
        .target_slice(bundle.predicted())
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v as f64)
        .sum()
}

pub fn evaluate(model: &Model, samples: &[Sample], seed: u64, epochs: usize) -> Result<Metrics> {
    contract!(!samples.is_empty(), "evaluation set is empty");
    let classes = model.classes();
    let s = model.input_size;
    let mut per_class = vec![(0usize, 0usize); classes];
    let (mut correct, mut mass_sum, mut mass_n) = (0usize, 0.0, 0usize);
    let mut probs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let prepared: Vec<(Image, Option<Mask>)> = chunk
            .iter()
            .map(|x| prepare(&x.image, x.mask.as_ref(), s))
            .collect();
        let images: Vec<Image> = prepared.iter().map(|(i, _)| i.clone()).collect();
        let bundles = model.attention(&images)?;
        for ((sample, (_, mask)), bundle) in chunk.iter().zip(&prepared).zip(&bundles) {
            sample.validate(classes)?;
            let hit = bundle.predicted() == sample.label;
            correct += usize::from(hit);
            per_class[sample.label].0 += usize::from(hit);
            per_class[sample.label].1 += 1;
            if let Some(m) = mask.as_ref().filter(|m| !m.is_empty()) {
                mass_sum += attention_in_mask(bundle, m);
                mass_n += 1;
            }
            probs.push(bundle.probs.clone());
        }
    }
    let ids: Vec<&str> = samples.iter().map(|s| s.study_id.as_str()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Metrics {
        image_acc: correct as f64 / samples.len() as f64,
        study_acc: study_accuracy(&ids, &labels, &probs),
        per_class_acc: per_class
            .iter()
            .map(|&(c, n)| (n > 0).then(|| c as f64 / n as f64))
            .collect(),
        attention_mass: (mass_n > 0).then(|| mass_sum / mass_n as f64),
        seed,
        epochs,
        wall_time_s: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_endpoints_and_midpoint() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg).unwrap(), 1e-3);
        assert!((lr_at(99, &cfg).unwrap() - 1e-5).abs() < 1e-18);
        let cfg = TrainConfig {
            epochs: 101,
            ..Default::default()
        };
        assert!((lr_at(50, &cfg).unwrap() - 5.05e-4).abs() < 1e-15);
        assert!(lr_at(101, &cfg).is_err());
    }

    #[test]
    fn lr_is_monotone() {
        let cfg = TrainConfig {
            epochs: 37,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..37).map(|e| lr_at(e, &cfg).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*lrs.last().unwrap(), cfg.lr_end);
    }

    #[test]
    fn study_average_example() {
        let acc = study_accuracy(&["s", "s"], &[0, 0], &[vec![0.9, 0.1], vec![0.4, 0.6]]);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn study_tie_goes_to_lowest_class() {
        let acc = study_accuracy(&["s", "s"], &[0, 0], &[vec![0.7, 0.3], vec![0.3, 0.7]]);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn uniform_attention_mass_is_area_fraction() {
        let n = 16 * 16;
        let target = Tensor::new([2, 16, 16], vec![1.0 / n as f32; 2 * n]).unwrap();
        let bundle = AttentionBundle {
            cam: Tensor::zeros([2, 2, 2]),
            attended: Tensor::zeros([2, 2, 2]),
            target,
            logits: vec![0.0, 1.0],
            probs: vec![0.3, 0.7],
        };
        let mask = Mask::from_values(
            16,
            16,
            &(0..n).map(|i| u8::from(i % 4 == 0)).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!((attention_in_mask(&bundle, &mask) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                lr_end: 1e-2,
                ..Default::default()
            },
            TrainConfig {
                input_size: 100,
                ..Default::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn style_choice_parses() {
        assert_eq!("none".parse::<StyleChoice>().unwrap(), StyleChoice::None);
        assert_eq!("bbox".parse::<StyleChoice>().unwrap(), StyleChoice::Bbox);
        assert!("blob".parse::<StyleChoice>().is_err());
    }
}
