//! Joint image/mask augmentation: pad to square, rotate, crop, flip, resize.
//!
//! Every step is folded into one inverse mapping from output pixel to source
//! coordinates, so the image (bilinear) and mask (nearest) see exactly the
//! same geometry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::{Image, Mask};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub max_rotation_deg: f64,
    /// Crop side as a fraction of the padded side.
    pub crop_scale: [f64; 2],
    pub flip_prob: f64,
    /// Minimum fraction of mask pixels that must stay inside the crop.
    pub min_retention: f64,
    pub max_redraws: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            crop_scale: [0.7, 1.0],
            flip_prob: 0.5,
            min_retention: 0.6,
            max_redraws: 10,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop_scale {:?} must satisfy 0 < lo ≤ hi ≤ 1",
                self.crop_scale
            )));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::Config(format!(
                "max_rotation_deg must be in [0,180], got {}",
                self.max_rotation_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(0.0..=1.0).contains(&self.min_retention) {
            return Err(Error::Config(
                "flip_prob and min_retention must be in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled geometric transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub angle_deg: f64,
    pub scale: f64,
    /// Crop origin as a fraction of the available slack, per axis (x, y).
    pub offset: [f64; 2],
    pub flip: bool,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        angle_deg: 0.0,
        scale: 1.0,
        offset: [0.5, 0.5],
        flip: false,
    };

    pub fn sample(params: &AugmentParams, rng: &mut impl Rng) -> Self {
        let m = params.max_rotation_deg;
        let [lo, hi] = params.crop_scale;
        AugmentDraw {
            angle_deg: if m > 0.0 {
                rng.random_range(-m..=m)
            } else {
                0.0
            },
            scale: if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            },
            offset: [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)],
            flip: rng.random_bool(params.flip_prob),
        }
    }
}

/// Source geometry resolved for a draw.
struct Frame {
    pad: [f64; 2],
    side: f64,
    crop: f64,
    origin: [f64; 2],
    cos: f64,
    sin: f64,
    flip: bool,
}

impl Frame {
    fn new(height: usize, width: usize, d: &AugmentDraw) -> Self {
        let side = height.max(width);
        let crop = d.scale * side as f64;
        let slack = side as f64 - crop;
        let t = d.angle_deg.to_radians();
        Frame {
            pad: [((side - width) / 2) as f64, ((side - height) / 2) as f64],
            side: side as f64,
            crop,
            origin: [d.offset[0] * slack, d.offset[1] * slack],
            cos: t.cos(),
            sin: t.sin(),
            flip: d.flip,
        }
    }

    /// Output pixel centre to continuous source coordinates.
    fn source(&self, row: usize, col: usize, target: usize) -> (f64, f64) {
        let k = self.crop / target as f64;
        let mut u = (col as f64 + 0.5) * k;
        if self.flip {
            u = self.crop - u;
        }
        let v = (row as f64 + 0.5) * k;
        let c = self.side / 2.0;
        let (dx, dy) = (self.origin[0] + u - c, self.origin[1] + v - c);
        let x = self.cos * dx + self.sin * dy + c;
        let y = -self.sin * dx + self.cos * dy + c;
        (x - self.pad[0], y - self.pad[1])
    }

    /// Whether a source pixel centre lands inside the crop window.
    fn keeps(&self, row: usize, col: usize) -> bool {
        let c = self.side / 2.0;
        let (dx, dy) = (
            col as f64 + 0.5 + self.pad[0] - c,
            row as f64 + 0.5 + self.pad[1] - c,
        );
        let x = self.cos * dx - self.sin * dy + c - self.origin[0];
        let y = self.sin * dx + self.cos * dy + c - self.origin[1];
        (0.0..self.crop).contains(&x) && (0.0..self.crop).contains(&y)
    }
}

/// Fraction of the mask's pixels that stay inside the crop window.
pub fn retention(mask: &Mask, d: &AugmentDraw) -> f64 {
    let total = mask.count();
    if total == 0 {
        return 1.0;
    }
    let f = Frame::new(mask.height, mask.width, d);
    let kept = (0..mask.height)
        .flat_map(|r| (0..mask.width).map(move |c| (r, c)))
        .filter(|&(r, c)| mask.get(r, c) && f.keeps(r, c))
        .count();
    kept as f64 / total as f64
}

pub fn warp_image(img: &Image, d: &AugmentDraw, target: usize) -> Image {
    let f = Frame::new(img.height, img.width, d);
    let (h, w) = (img.height as isize, img.width as isize);
    let px = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= h || c >= w {
            0.0
        } else {
            img.data[r as usize * img.width + c as usize]
        }
    };
    let mut out = Vec::with_capacity(target * target);
    for row in 0..target {
        for col in 0..target {
            let (x, y) = f.source(row, col, target);
            let (x, y) = (x - 0.5, y - 0.5);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
            let (c0, r0) = (x0 as isize, y0 as isize);
            let top = px(r0, c0) * (1.0 - fx) + px(r0, c0 + 1) * fx;
            let bottom = px(r0 + 1, c0) * (1.0 - fx) + px(r0 + 1, c0 + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Image {
        height: target,
        width: target,
        data: out,
    }
}

pub fn warp_mask(mask: &Mask, d: &AugmentDraw, target: usize) -> Mask {
    let f = Frame::new(mask.height, mask.width, d);
    let mut out = Mask::zeros(target, target);
    for row in 0..target {
        for col in 0..target {
            let (x, y) = f.source(row, col, target);
            let (c, r) = (x.floor(), y.floor());
            if r >= 0.0 && c >= 0.0 && (r as usize) < mask.height && (c as usize) < mask.width {
                out.set(row, col, mask.get(r as usize, c as usize));
            }
        }
    }
    out
}

/// Picks a draw whose crop keeps at least `min_retention` of the mask,
/// retrying up to `max_redraws` times before falling back to a full centre
/// crop without rotation.
pub fn choose_draw(mask: Option<&Mask>, params: &AugmentParams, rng: &mut impl Rng) -> AugmentDraw {
    for _ in 0..params.max_redraws.max(1) {
        let d = AugmentDraw::sample(params, rng);
        if mask.is_none_or(|m| retention(m, &d) >= params.min_retention) {
            return d;
        }
    }
    AugmentDraw::IDENTITY
}

/// Augments an image and its mask with one shared draw, resizing to `target`.
pub fn augment(
    image: &Image,
    mask: Option<&Mask>,
    params: &AugmentParams,
    target: usize,
    rng: &mut impl Rng,
) -> (Image, Option<Mask>) {
    let d = choose_draw(mask, params, rng);
    (
        warp_image(image, &d, target),
        mask.map(|m| warp_mask(m, &d, target)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Image {
        Image::new(h, w, (0..h * w).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap()
    }

    #[test]
    fn identity_draw_is_exact_at_same_size() {
        let img = ramp(16, 16);
        let mask = Mask::from_values(
            16,
            16,
            &(0..256).map(|i| (i % 3 == 0) as u8).collect::<Vec<_>>(),
        )
        .unwrap();
        let out = warp_image(&img, &AugmentDraw::IDENTITY, 16);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(warp_mask(&mask, &AugmentDraw::IDENTITY, 16), mask);
    }

    #[test]
    fn flip_mirrors_columns() {
        let mut m = Mask::zeros(8, 8);
        m.set(2, 1, true);
        let d = AugmentDraw {
            flip: true,
            ..AugmentDraw::IDENTITY
        };
        let out = warp_mask(&m, &d, 8);
        assert!(out.get(2, 6));
        assert_eq!(out.count(), 1);
    }

    #[test]
    fn padding_centres_non_square_input() {
        let img = Image::filled(4, 8, 1.0);
        let out = warp_image(&img, &AugmentDraw::IDENTITY, 8);
        // rows 0-1 and 6-7 are padding
        assert!(out.data[..8].iter().all(|&v| v < 0.5));
        assert!(out.data[3 * 8..4 * 8]
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn identity_retention_is_one() {
        let m = Mask::from_values(4, 4, &[1; 16]).unwrap();
        assert_eq!(retention(&m, &AugmentDraw::IDENTITY), 1.0);
    }

    #[test]
    fn chosen_draw_respects_retention_floor() {
        let mut m = Mask::zeros(32, 32);
        for r in 0..6 {
            for c in 0..6 {
                m.set(r, c, true);
            }
        }
        let p = AugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = choose_draw(Some(&m), &p, &mut rng);
            assert!(retention(&m, &d) >= 0.6);
        }
    }

    #[test]
    fn rejects_bad_crop_scale() {
        let p = AugmentParams {
            crop_scale: [0.9, 0.5],
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
