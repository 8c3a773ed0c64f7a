//! Heatmap overlays of class activation and self-attention maps.

mod ramp;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ramp::VIRIDIS;

use crate::autodiff::upsample_plane;
use crate::data::Image;
use crate::error::{contract, Error, Result};
use crate::head::AttentionBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    /// Raw CAM, min/max normalized per class.
    RawCam,
    /// Attended maps, min/max normalized jointly over all classes.
    SelfAttention,
}

impl std::fmt::Display for HeatmapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeatmapMode::RawCam => "raw_cam",
            HeatmapMode::SelfAttention => "self_attention",
        })
    }
}

impl std::str::FromStr for HeatmapMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw_cam" => Ok(HeatmapMode::RawCam),
            "self_attention" => Ok(HeatmapMode::SelfAttention),
            other => Err(Error::Config(format!("unknown heatmap mode {other:?}"))),
        }
    }
}

/// Maps `values` to `[0, 1]` using `[lo, hi]`; a degenerate range gives 0.5.
pub fn normalize(values: &[f32], lo: f32, hi: f32) -> Vec<f32> {
    if hi <= lo {
        return vec![0.5; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

fn min_max(values: &[f32]) -> (f32, f32) {
    values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

pub fn ramp_color(v: f32) -> [u8; 3] {
    VIRIDIS[(v.clamp(0.0, 1.0) * 255.0).round() as usize]
}

/// Normalized map for `class` at the image's resolution.
pub fn heatmap_values(
    image: &Image,
    bundle: &AttentionBundle,
    mode: HeatmapMode,
    class: usize,
) -> Result<Vec<f32>> {
    contract!(
        class < bundle.classes(),
        "class {class} out of range for {} classes",
        bundle.classes()
    );
    let shape = bundle.cam.shape();
    let (h, w) = (shape[1], shape[2]);
    contract!(
        image.height >= h && image.width >= w,
        "image {}×{} smaller than the {h}×{w} map",
        image.height,
        image.width
    );
    let up = |plane: &[f32]| upsample_plane(plane, h, w, image.height, image.width);
    Ok(match mode {
        HeatmapMode::RawCam => {
            let m = up(bundle.cam_slice(class));
            let (lo, hi) = min_max(&m);
            normalize(&m, lo, hi)
        }
        HeatmapMode::SelfAttention => {
            let all: Vec<Vec<f32>> = (0..bundle.classes())
                .map(|c| up(bundle.attended_slice(c)))
                .collect();
            let (lo, hi) = all
                .iter()
                .map(|m| min_max(m))
                .fold((f32::INFINITY, f32::NEG_INFINITY), |a, b| {
                    (a.0.min(b.0), a.1.max(b.1))
                });
            normalize(&all[class], lo, hi)
        }
    })
}

/// 8-bit RGB overlay: the colour ramp blended at 50% over the grayscale image.
pub fn render_heatmap(
    image: &Image,
    bundle: &AttentionBundle,
    mode: HeatmapMode,
    class: usize,
) -> Result<Vec<u8>> {
    let values = heatmap_values(image, bundle, mode, class)?;
    let mut rgb = Vec::with_capacity(values.len() * 3);
    for (&g, &v) in image.data.iter().zip(&values) {
        let gray = g.clamp(0.0, 1.0) * 255.0;
        for ch in ramp_color(v) {
            rgb.push((0.5 * gray + 0.5 * ch as f32).round() as u8);
        }
    }
    Ok(rgb)
}

pub fn export_heatmap(
    image: &Image,
    bundle: &AttentionBundle,
    mode: HeatmapMode,
    class: usize,
    path: &Path,
) -> Result<()> {
    let rgb = render_heatmap(image, bundle, mode, class)?;
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, rgb)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn bundle(cam: Vec<f32>, attended: Vec<f32>) -> AttentionBundle {
        AttentionBundle {
            cam: Tensor::new([2, 2, 2], cam).unwrap(),
            attended: Tensor::new([2, 2, 2], attended).unwrap(),
            target: Tensor::zeros([2, 8, 8]),
            logits: vec![0.0, 0.0],
            probs: vec![0.5, 0.5],
        }
    }

    #[test]
    fn constant_map_is_mid_ramp() {
        let b = bundle(vec![3.0; 8], vec![1.0; 8]);
        let img = Image::filled(8, 8, 0.0);
        for mode in [HeatmapMode::RawCam, HeatmapMode::SelfAttention] {
            assert!(heatmap_values(&img, &b, mode, 1)
                .unwrap()
                .iter()
                .all(|&v| v == 0.5));
        }
    }

    #[test]
    fn raw_cam_max_hits_top_of_ramp() {
        let b = bundle(vec![0.0, 1.0, 2.0, 5.0, 9.0, 9.0, 9.0, 9.0], vec![0.0; 8]);
        let img = Image::filled(8, 8, 0.0);
        let v = heatmap_values(&img, &b, HeatmapMode::RawCam, 0).unwrap();
        let max = v.iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(max, 1.0);
        assert_eq!(v.iter().cloned().fold(f32::MAX, f32::min), 0.0);
    }

    #[test]
    fn self_attention_is_jointly_normalized() {
        // class 0 spans [0, 1], class 1 spans [0, 2]; class 0 never reaches 1.0
        let b = bundle(vec![0.0; 8], vec![0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0]);
        let img = Image::filled(8, 8, 0.0);
        let v0 = heatmap_values(&img, &b, HeatmapMode::SelfAttention, 0).unwrap();
        assert!(v0.iter().all(|&v| v <= 0.6));
    }

    #[test]
    fn png_has_image_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        let b = bundle((0..8).map(|i| i as f32).collect(), vec![0.0; 8]);
        export_heatmap(&Image::filled(8, 8, 0.5), &b, HeatmapMode::RawCam, 1, &p).unwrap();
        let back = image::open(&p).unwrap();
        assert_eq!((back.width(), back.height()), (8, 8));
    }
}
