//! Datasets, the synthetic benchmark, annotation converters and augmentation.

mod augment;
mod convert;
mod dataset;
mod raster;
mod synth;

pub use augment::{
    augment, choose_draw, retention, warp_image, warp_mask, AugmentDraw, AugmentParams,
};
pub use convert::{components, mask_to_bbox, mask_to_scribble, zhang_suen_thin};
pub use dataset::{Dataset, Sample, META_FILE, SPLITS};
pub use raster::{read_image, read_mask, write_image, write_mask, Image, Mask};
pub use synth::{has_tag, synthesize, SynthConfig, SIZE_MULTIPLE, VIEW_NAMES};
