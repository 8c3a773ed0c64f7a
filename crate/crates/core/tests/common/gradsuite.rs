//! Finite-difference checks for every differentiable operator, each over ten
//! random shapes.

use attn_guide::autodiff::*;
use attn_guide::backbone::{BackboneConfig, Network};
use attn_guide::head::{attend, cam, gap_head, self_attention_head, soft_attention_target};
use attn_guide::loss::{
    cross_entropy_batch, guidance_batch, norm_regularizer_batch, total_loss, FocusRegionMask,
    GuidanceStyle, LossConfig, LossMode,
};
use rand::Rng;

use super::{grad_check, normal, project, rng, uniform};

pub const SHAPES_PER_OP: usize = 10;

pub struct OpResult {
    pub name: &'static str,
    pub worst: f64,
    pub shapes: usize,
}

fn run(name: &'static str, mut case: impl FnMut(u64) -> f64) -> OpResult {
    let mut worst: f64 = 0.0;
    for s in 0..SHAPES_PER_OP as u64 {
        worst = worst.max(case(s * 7919 + 13));
    }
    OpResult {
        name,
        worst,
        shapes: SHAPES_PER_OP,
    }
}

pub fn conv2d_case() -> OpResult {
    run("conv2d", |seed| {
        let mut r = rng(seed);
        let (n, c, o) = (
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..5),
        );
        let k = [1, 3][r.random_range(0..2)];
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..2);
        let h = r.random_range(k.max(3)..9);
        let w = r.random_range(k.max(3)..9);
        let x = normal(&mut r, &[n, c, h, w], 1.0);
        let kern = normal(&mut r, &[o, c, k, k], 0.5);
        grad_check(&[x, kern], seed, |_, v| {
            project(conv2d(v[0], v[1], stride, pad).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn maxpool_case() -> OpResult {
    run("maxpool2d", |seed| {
        let mut r = rng(seed);
        let (n, c) = (r.random_range(1..3), r.random_range(1..4));
        let win = r.random_range(1..4);
        let stride = r.random_range(1..3);
        let x_shape = [n, c, r.random_range(win..8), r.random_range(win..8)];
        let x = normal(&mut r, &x_shape, 1.0);
        grad_check(&[x], seed, |_, v| {
            project(maxpool2d(v[0], win, stride).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn relu_case() -> OpResult {
    run("relu", |seed| {
        let mut r = rng(seed);
        let shape = [
            r.random_range(1..4),
            r.random_range(1..6),
            r.random_range(1..6),
        ];
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        grad_check(&[x], seed, |_, v| project(relu(v[0]), seed)).rel_error
    })
}

pub fn add_mul_case() -> OpResult {
    run("add/mul", |seed| {
        let mut r = rng(seed);
        let shape = [r.random_range(1..4), r.random_range(1..6)];
        let a = normal(&mut r, &shape, 1.0);
        let b = normal(&mut r, &shape, 1.0);
        grad_check(&[a, b], seed, |_, v| {
            let s = add(v[0], v[1]).unwrap();
            project(mul(s, v[1]).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn linear_case() -> OpResult {
    run("linear", |seed| {
        let mut r = rng(seed);
        let (n, k, c) = (
            r.random_range(1..5),
            r.random_range(1..7),
            r.random_range(2..5),
        );
        let x = normal(&mut r, &[n, k], 1.0);
        let w = normal(&mut r, &[k, c], 1.0);
        let b = normal(&mut r, &[c], 1.0);
        grad_check(&[x, w, b], seed, |_, v| {
            project(linear(v[0], v[1], v[2]).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn channel_softmax_case() -> OpResult {
    run("channel_softmax", |seed| {
        let mut r = rng(seed);
        let x_shape = [r.random_range(1..5), r.random_range(2..6)];
        let x = normal(&mut r, &x_shape, 2.0);
        grad_check(&[x], seed, |_, v| {
            project(channel_softmax(v[0]).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn spatial_softmax_case() -> OpResult {
    run("spatial_softmax", |seed| {
        let mut r = rng(seed);
        let x_shape = [
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..6),
            r.random_range(2..6),
        ];
        let x = normal(&mut r, &x_shape, 2.0);
        grad_check(&[x], seed, |_, v| {
            project(spatial_softmax(v[0]).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn pool_sum_case() -> OpResult {
    run("global_average_pool/spatial_sum", |seed| {
        let mut r = rng(seed);
        let x_shape = [
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..6),
            r.random_range(1..6),
        ];
        let x = normal(&mut r, &x_shape, 1.0);
        grad_check(&[x], seed, |_, v| {
            let a = project(global_average_pool(v[0]).unwrap(), seed);
            let b = project(spatial_sum(v[0]).unwrap(), seed + 1);
            add(a, b).unwrap()
        })
        .rel_error
    })
}

pub fn group_norm_case() -> OpResult {
    run("group_norm", |seed| {
        let mut r = rng(seed);
        let groups = r.random_range(1..3);
        let c = groups * r.random_range(1..4);
        let x_shape = [
            r.random_range(1..3),
            c,
            r.random_range(2..5),
            r.random_range(2..5),
        ];
        let x = normal(&mut r, &x_shape, 1.5);
        let g = uniform(&mut r, &[c], 0.5, 1.5);
        let b = normal(&mut r, &[c], 0.5);
        grad_check(&[x, g, b], seed, |_, v| {
            project(group_norm(v[0], v[1], v[2], groups).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn bicubic_case() -> OpResult {
    run("bicubic_upsample", |seed| {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(2..6), r.random_range(2..6));
        let x_shape = [r.random_range(1..3), r.random_range(1..3), h, w];
        let x = normal(&mut r, &x_shape, 1.0);
        let (th, tw) = (h + r.random_range(0..12), w + r.random_range(0..12));
        grad_check(&[x], seed, |_, v| {
            project(bicubic_upsample(v[0], th, tw).unwrap(), seed)
        })
        .rel_error
    })
}

pub fn cam_bias_case() -> OpResult {
    run("cam/add_channel_bias", |seed| {
        let mut r = rng(seed);
        let (n, k, c) = (
            r.random_range(1..3),
            r.random_range(1..6),
            r.random_range(2..4),
        );
        let f_shape = [n, k, r.random_range(1..5), r.random_range(1..5)];
        let f = normal(&mut r, &f_shape, 1.0);
        let w = normal(&mut r, &[k, c], 1.0);
        let b = normal(&mut r, &[c], 1.0);
        grad_check(&[f, w, b], seed, |_, v| {
            project(
                add_channel_bias(cam(v[0], v[1]).unwrap(), v[2]).unwrap(),
                seed,
            )
        })
        .rel_error
    })
}

pub fn head_case() -> OpResult {
    run(
        "gap_head/soft_attention_target/self_attention_head",
        |seed| {
            let mut r = rng(seed);
            let (n, k, c) = (
                r.random_range(1..3),
                r.random_range(1..5),
                r.random_range(2..4),
            );
            let (h, w) = (r.random_range(2..5), r.random_range(2..5));
            let f = normal(&mut r, &[n, k, h, w], 1.0);
            let wt = normal(&mut r, &[k, c], 1.0);
            let b = normal(&mut r, &[c], 1.0);
            let (th, tw) = (h * 2, w * 3);
            grad_check(&[f, wt, b], seed, |_, v| {
                let gap = gap_head(v[0], v[1], v[2]).unwrap();
                let m = cam(v[0], v[1]).unwrap();
                let sa = self_attention_head(m, v[2]).unwrap();
                let t = soft_attention_target(m, v[2], th, tw).unwrap();
                let parts = [
                    project(gap.probs, seed),
                    project(sa.probs, seed + 1),
                    project(sa.attended, seed + 2),
                    project(t, seed + 3),
                ];
                parts[1..]
                    .iter()
                    .fold(parts[0], |acc, &p| add(acc, p).unwrap())
            })
            .rel_error
        },
    )
}

pub fn loss_terms_case() -> OpResult {
    run("cross_entropy/guidance/norm_regularizer", |seed| {
        let mut r = rng(seed);
        let (n, c, h, w) = (
            r.random_range(1..4),
            r.random_range(2..4),
            r.random_range(2..5),
            r.random_range(2..5),
        );
        let p = uniform(&mut r, &[n, c], 0.05, 0.95);
        let t = uniform(&mut r, &[n, c, h, w], 0.02, 0.9);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
        let masks: Vec<Option<FocusRegionMask>> = (0..n)
            .map(|i| {
                if i == 1 {
                    return None;
                }
                let plane: Vec<u8> = (0..h * w).map(|_| r.random_range(0..2)).collect();
                Some(
                    FocusRegionMask::unified(&plane, h, w, c, GuidanceStyle::Segmentation).unwrap(),
                )
            })
            .collect();
        let lambda = r.random_range(0.1..2.0);
        grad_check(&[p, t.clone(), t], seed, |_, v| {
            let refs: Vec<Option<&FocusRegionMask>> = masks.iter().map(Option::as_ref).collect();
            let ce = cross_entropy_batch(v[0], &labels, &weights, 1e-7).unwrap();
            let g = guidance_batch(v[1], &refs, lambda, 1e-7).unwrap();
            let l1 = norm_regularizer_batch(v[2], lambda, 1).unwrap();
            let l2 = norm_regularizer_batch(v[2], lambda, 2).unwrap();
            add(add(ce, g).unwrap(), add(l1, l2).unwrap()).unwrap()
        })
        .rel_error
    })
}

/// Composite loss w.r.t. W, b and F, cycling through every loss mode.
pub fn total_loss_case() -> OpResult {
    run("total_loss", |seed| {
        let mut r = rng(seed);
        let (n, k, c) = (
            r.random_range(1..3),
            r.random_range(1..5),
            r.random_range(2..4),
        );
        let (h, w) = (r.random_range(2..4), r.random_range(2..4));
        let (th, tw) = (h * 4, w * 4);
        let f = normal(&mut r, &[n, k, h, w], 1.0);
        let wt = normal(&mut r, &[k, c], 0.7);
        let b = normal(&mut r, &[c], 0.5);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let masks: Vec<FocusRegionMask> = (0..n)
            .map(|_| {
                let plane: Vec<u8> = (0..th * tw)
                    .map(|_| u8::from(r.random_range(0..4) == 0))
                    .collect();
                FocusRegionMask::unified(&plane, th, tw, c, GuidanceStyle::Bbox).unwrap()
            })
            .collect();
        let mode = [
            LossMode::Guidance,
            LossMode::L1,
            LossMode::L2,
            LossMode::None,
        ][(seed % 4) as usize];
        let config = LossConfig {
            lambda: r.random_range(0.2..2.0),
            mode,
            class_weights: Some((0..c).map(|i| 0.5 + i as f64).collect()),
            ..Default::default()
        };
        grad_check(&[f, wt, b], seed, |_, v| {
            let pass = attend(v[0], v[1], v[2], Some((th, tw))).unwrap();
            let refs: Vec<Option<&FocusRegionMask>> = masks.iter().map(Some).collect();
            total_loss(&pass, &labels, &refs, &config).unwrap().total
        })
        .rel_error
    })
}

/// End-to-end through a tiny backbone, checking a subset of its parameters.
pub fn network_case() -> OpResult {
    run("backbone+head", |seed| {
        let mut r = rng(seed);
        let cfg = BackboneConfig {
            in_channels: 1,
            base_channels: [2, 4][r.random_range(0..2)],
            stages: r.random_range(1..3),
            blocks_per_stage: r.random_range(1..3),
            stem_stride: 1,
            stem_pool: r.random_range(0..2) == 1,
            identity_init: false,
        };
        let net = Network::new(cfg.clone(), 2).unwrap();
        let size = cfg.downsample_factor() * 2;
        let store = net.init_weights(seed);
        let mut params: Vec<Tensor<f64>> = store.tensors().iter().map(|t| t.cast()).collect();
        // perturb affine params away from their 1/0 init so every path is exercised
        for (name, t) in store.names().iter().zip(params.iter_mut()) {
            if name.ends_with("gamma") || name.ends_with("beta") || name.ends_with("bias") {
                for v in t.data_mut() {
                    *v += r.random_range(-0.3..0.3);
                }
            }
        }
        let img = uniform(&mut r, &[2, 1, size, size], 0.0, 1.0);
        let labels = [0usize, 1];
        let plane: Vec<u8> = (0..size * size).map(|i| u8::from(i % 3 == 0)).collect();
        let mask =
            FocusRegionMask::unified(&plane, size, size, 2, GuidanceStyle::Scribble).unwrap();
        let config = LossConfig {
            lambda: 0.5,
            ..Default::default()
        };
        // Only check first conv, a middle norm scale and the head; the rest
        // are constants here to keep the probe count bounded.
        let picks = [0usize, 4, params.len() - 2, params.len() - 1];
        let inputs: Vec<Tensor<f64>> = picks.iter().map(|&i| params[i].clone()).collect();
        grad_check(&inputs, seed, |tape, v| {
            let mut all = Vec::with_capacity(params.len());
            for (i, p) in params.iter().enumerate() {
                match picks.iter().position(|&q| q == i) {
                    Some(j) => all.push(v[j]),
                    None => all.push(tape.constant(p.clone()).unwrap()),
                }
            }
            let x = tape.constant(img.clone()).unwrap();
            let feats = net.features(&all, x).unwrap();
            let (w, b) = net.head_params(&all);
            let pass = attend(feats, w, b, Some((size, size))).unwrap();
            total_loss(&pass, &labels, &[Some(&mask), Some(&mask)], &config)
                .unwrap()
                .total
        })
        .rel_error
    })
}

pub fn all_cases() -> Vec<OpResult> {
    vec![
        conv2d_case(),
        maxpool_case(),
        relu_case(),
        add_mul_case(),
        linear_case(),
        channel_softmax_case(),
        spatial_softmax_case(),
        pool_sum_case(),
        group_norm_case(),
        bicubic_case(),
        cam_bias_case(),
        head_case(),
        loss_terms_case(),
        total_loss_case(),
        network_case(),
    ]
}
