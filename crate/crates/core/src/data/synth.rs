//! Synthetic fracture-like benchmark with a spurious corner tag.
//!
//! Each view shows an elongated capsule ("bone") on a noisy background. Fracture
//! classes add a thin dark line across the bone, clipped to the bone mask. A
//! bright glyph in the top-left corner agrees with the label's parity with
//! probability `ρ`, which gives a classifier an easy shortcut outside the
//! annotated region.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use super::raster::{Image, Mask};
use crate::error::{Error, Result};

pub const VIEW_NAMES: [&str; 3] = ["ap", "lateral", "oblique"];

/// Image sizes must be a multiple of this so every supported backbone
/// depth divides them.
pub const SIZE_MULTIPLE: usize = 32;

const BACKGROUND: f32 = 0.15;
const BONE: f32 = 0.55;
const TAG: f32 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub classes: usize,
    /// Studies generated per class before splitting.
    pub n_studies: usize,
    pub views_per_study: usize,
    /// Train/val/test fractions of each class's studies.
    pub split: [f64; 3],
    pub spurious_train_rate: f64,
    pub spurious_test_rate: f64,
    pub noise_std: f64,
    /// Intensity drop along the fracture line.
    pub fracture_contrast: f64,
    /// Width of the fracture line in pixels.
    pub fracture_width: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            classes: 2,
            n_studies: 100,
            views_per_study: 1,
            split: [0.7, 0.1, 0.2],
            spurious_train_rate: 0.95,
            spurious_test_rate: 0.5,
            noise_std: 0.05,
            fracture_contrast: 0.45,
            fracture_width: 6.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 64 || !self.image_size.is_multiple_of(SIZE_MULTIPLE) {
            return bad(format!(
                "image_size {} must be ≥ 64 and a multiple of {SIZE_MULTIPLE}",
                self.image_size
            ));
        }
        if self.classes != 2 && self.classes != 4 {
            return bad(format!("classes must be 2 or 4, got {}", self.classes));
        }
        if !(1..=3).contains(&self.views_per_study) {
            return bad(format!(
                "views_per_study must be 1..=3, got {}",
                self.views_per_study
            ));
        }
        if self.n_studies == 0 {
            return bad("n_studies must be positive".into());
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "split fractions {:?} must be in [0,1] and sum to 1",
                self.split
            ));
        }
        for (name, r) in [
            ("spurious_train_rate", self.spurious_train_rate),
            ("spurious_test_rate", self.spurious_test_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0,1], got {r}"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            ));
        }
        if !(self.fracture_width > 0.0 && self.fracture_width <= self.image_size as f64 / 4.0) {
            return bad(format!(
                "fracture_width must be in (0, image_size/4], got {}",
                self.fracture_width
            ));
        }
        if !(0.0..=1.0).contains(&self.fracture_contrast) {
            return bad(format!(
                "fracture_contrast must be in [0,1], got {}",
                self.fracture_contrast
            ));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        let names: &[&str] = if self.classes == 2 {
            &["no_fracture", "fracture"]
        } else {
            &["no_fracture", "weber_a", "weber_b", "weber_c"]
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Number of studies per class landing in train, val and test.
    pub fn split_counts(&self) -> [usize; 3] {
        let train = (self.n_studies as f64 * self.split[0]).round() as usize;
        let val =
            ((self.n_studies as f64 * self.split[1]).round() as usize).min(self.n_studies - train);
        [train, val, self.n_studies - train - val]
    }

    /// Side length of the corner tag glyph.
    pub fn tag_size(&self) -> usize {
        (self.image_size / 12).max(4)
    }
}

struct Pose {
    cx: f64,
    cy: f64,
    /// Unit axis (x, y).
    ux: f64,
    uy: f64,
    half_len: f64,
    radius: f64,
}

impl Pose {
    fn draw(rng: &mut ChaCha8Rng, s: f64) -> Self {
        let theta = rng.random_range(-25f64..25.0).to_radians();
        Pose {
            cx: s * (0.5 + rng.random_range(-0.08..0.08)),
            cy: s * (0.5 + rng.random_range(-0.08..0.08)),
            ux: theta.sin(),
            uy: theta.cos(),
            half_len: s * rng.random_range(0.28..0.36),
            radius: s * rng.random_range(0.07..0.10),
        }
    }

    /// Distance from a point to the capsule's axis segment.
    fn axis_distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let t = (dx * self.ux + dy * self.uy).clamp(-self.half_len, self.half_len);
        let (px, py) = (dx - t * self.ux, dy - t * self.uy);
        (px * px + py * py).sqrt()
    }
}

/// Axial position range (in units of the half length) where the fracture
/// line may sit for a given label.
fn fracture_zone(classes: usize, label: usize) -> (f64, f64) {
    match (classes, label) {
        (2, _) => (-0.5, 0.5),
        (_, 1) => (-0.7, -0.4),
        (_, 2) => (-0.15, 0.15),
        _ => (0.4, 0.7),
    }
}

fn render_view(
    cfg: &SynthConfig,
    label: usize,
    tagged: bool,
    rng: &mut ChaCha8Rng,
) -> (Image, Mask) {
    let n = cfg.image_size;
    let s = n as f64;
    let tag = cfg.tag_size();
    let clear = tag + 8;
    let corner_free = |p: &Pose| {
        (0..clear)
            .all(|r| (0..clear).all(|c| p.axis_distance(c as f64 + 0.5, r as f64 + 0.5) > p.radius))
    };
    // keep the bone clear of the tag corner
    let mut pose = Pose::draw(rng, s);
    while !corner_free(&pose) {
        pose = Pose::draw(rng, s);
    }

    let mut img = vec![0f32; n * n];
    let mut mask = Mask::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let d = pose.axis_distance(x, y);
            let v = if d <= pose.radius {
                mask.set(r, c, true);
                BONE + 0.1 * (1.0 - (d / pose.radius).powi(2)) as f32
            } else {
                BACKGROUND + 0.05 * (y / s) as f32
            };
            img[r * n + c] = v;
        }
    }

    if label > 0 {
        let (lo, hi) = fracture_zone(cfg.classes, label);
        let along = rng.random_range(lo..hi) * pose.half_len;
        let (px, py) = (pose.cx + along * pose.ux, pose.cy + along * pose.uy);
        // line normal is the bone axis tilted by up to 20 degrees
        let phi = rng.random_range(-20f64..20.0).to_radians();
        let (nx, ny) = (
            pose.ux * phi.cos() - pose.uy * phi.sin(),
            pose.ux * phi.sin() + pose.uy * phi.cos(),
        );
        let half = cfg.fracture_width / 2.0;
        for r in 0..n {
            for c in 0..n {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                if mask.get(r, c) && ((x - px) * nx + (y - py) * ny).abs() <= half {
                    img[r * n + c] -= cfg.fracture_contrast as f32;
                }
            }
        }
    }

    if tagged {
        // an "L"-shaped glyph
        let (o, bar) = (4, (tag / 3).max(1));
        for r in o..o + tag {
            for c in o..o + tag {
                if c < o + bar || r >= o + tag - bar {
                    img[r * n + c] = TAG;
                }
            }
        }
    }

    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("validated noise_std");
        for v in &mut img {
            *v += noise.sample(rng) as f32;
        }
    }
    let mut image = Image {
        height: n,
        width: n,
        data: img,
    };
    image.quantize16();
    (image, mask)
}

/// Generates all splits. Every study draws from its own ChaCha stream, so
/// output depends only on the config.
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let counts = cfg.split_counts();
    let mut ds = Dataset::empty(cfg.class_names());
    for label in 0..cfg.classes {
        for j in 0..cfg.n_studies {
            let index = label * cfg.n_studies + j;
            let split = if j < counts[0] {
                0
            } else if j < counts[0] + counts[1] {
                1
            } else {
                2
            };
            let rho = if split == 2 {
                cfg.spurious_test_rate
            } else {
                cfg.spurious_train_rate
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64);
            let study_id = format!("study{index:05}");
            for view in VIEW_NAMES.iter().take(cfg.views_per_study) {
                let agrees = rng.random_bool(rho);
                let tagged = (label % 2 == 1) == agrees;
                let (image, mask) = render_view(cfg, label, tagged, &mut rng);
                ds.split_mut(split).push(Sample {
                    image,
                    label,
                    view: view.to_string(),
                    study_id: study_id.clone(),
                    mask: Some(mask),
                });
            }
        }
    }
    Ok(ds)
}

/// True when the corner glyph region is predominantly bright.
pub fn has_tag(cfg: &SynthConfig, image: &Image) -> bool {
    let (o, tag) = (4, cfg.tag_size());
    let bar = (tag / 3).max(1);
    let mut sum = 0.0;
    for r in o..o + tag {
        for c in o..o + bar {
            sum += image.get(r, c);
        }
    }
    sum / (tag * bar) as f32 > (TAG + BACKGROUND) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            image_size: 64,
            n_studies: 6,
            views_per_study: 2,
            split: [0.5, 0.0, 0.5],
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(synthesize(&small()).unwrap(), synthesize(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(synthesize(&small()).unwrap(), synthesize(&other).unwrap());
    }

    #[test]
    fn fracture_pixels_lie_inside_mask() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..small()
        };
        let ds = synthesize(&cfg).unwrap();
        for s in ds.all() {
            let mask = s.mask.as_ref().unwrap();
            let dark = (0..s.image.data.len())
                .filter(|&i| {
                    let inside = mask.data[i] != 0;
                    let v = s.image.data[i];
                    inside && v < BONE - 0.05
                })
                .count();
            assert_eq!(dark > 0, s.label > 0, "study {}", s.study_id);
            // outside the mask nothing is darker than the background
            for (i, &v) in s.image.data.iter().enumerate() {
                if mask.data[i] == 0 {
                    assert!(v >= BACKGROUND - 1e-4);
                }
            }
        }
    }

    #[test]
    fn tag_never_touches_bone() {
        let ds = synthesize(&small()).unwrap();
        let t = small().tag_size() + 4;
        for s in ds.all() {
            let m = s.mask.as_ref().unwrap();
            for r in 0..t {
                for c in 0..t {
                    assert!(!m.get(r, c));
                }
            }
        }
    }

    #[test]
    fn counting() {
        let cfg = SynthConfig {
            n_studies: 10,
            views_per_study: 3,
            split: [1.0, 0.0, 0.0],
            image_size: 64,
            ..Default::default()
        };
        let ds = synthesize(&cfg).unwrap();
        assert_eq!(ds.train.len(), 60);
        assert!(ds.val.is_empty() && ds.test.is_empty());
    }

    #[test]
    fn four_class_names() {
        let cfg = SynthConfig {
            classes: 4,
            ..small()
        };
        let ds = synthesize(&cfg).unwrap();
        assert_eq!(ds.class_names[3], "weber_c");
        assert!(ds.all().any(|s| s.label == 3));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                image_size: 100,
                ..small()
            },
            SynthConfig {
                classes: 3,
                ..small()
            },
            SynthConfig {
                spurious_train_rate: 1.5,
                ..small()
            },
            SynthConfig {
                split: [0.5, 0.5, 0.5],
                ..small()
            },
            SynthConfig {
                views_per_study: 0,
                ..small()
            },
        ] {
            assert!(matches!(synthesize(&cfg), Err(Error::Config(_))));
        }
    }
}
