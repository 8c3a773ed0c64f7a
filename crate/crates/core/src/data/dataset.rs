//! Samples, splits and the on-disk dataset layout.
//!
//! ```text
//! root/{train,val,test}/images/<study>_<view>.pgm
//! root/{train,val,test}/masks/<study>_<view>.pgm     (optional, nonzero = annotated)
//! root/{train,val,test}/labels.csv                   study_id,view,filename,label
//! root/synth_meta.json                               (generator config, optional)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::convert::{mask_to_bbox, mask_to_scribble};
use super::raster::{read_image, read_mask, write_image, write_mask, Image, Mask};
use super::synth::SynthConfig;
use crate::error::{contract, Error, Result};
use crate::loss::GuidanceStyle;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const META_FILE: &str = "synth_meta.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub view: String,
    pub study_id: String,
    pub mask: Option<Mask>,
}

impl Sample {
    pub fn filename(&self) -> String {
        format!("{}_{}.pgm", self.study_id, self.view)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        contract!(
            self.label < classes,
            "label {} out of range for {classes} classes",
            self.label
        );
        if let Some(m) = &self.mask {
            contract!(
                m.height == self.image.height && m.width == self.image.width,
                "mask {}×{} vs image {}×{}",
                m.height,
                m.width,
                self.image.height,
                self.image.width
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    study_id: String,
    view: String,
    filename: String,
    label: String,
}

impl Dataset {
    pub fn empty(class_names: Vec<String>) -> Self {
        Self {
            class_names,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split(&self, i: usize) -> &[Sample] {
        match i {
            0 => &self.train,
            1 => &self.val,
            _ => &self.test,
        }
    }

    pub fn split_mut(&mut self, i: usize) -> &mut Vec<Sample> {
        match i {
            0 => &mut self.train,
            1 => &mut self.val,
            _ => &mut self.test,
        }
    }

    pub fn split_by_name(&self, name: &str) -> Result<&[Sample]> {
        SPLITS
            .iter()
            .position(|s| *s == name)
            .map(|i| self.split(i))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown split {name:?}; expected train, val or test"
                ))
            })
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Replaces every mask with its `style` rendition; empty masks are dropped.
    pub fn convert_masks(&mut self, style: GuidanceStyle, scribble_width: usize) -> Result<()> {
        for i in 0..3 {
            for s in self.split_mut(i) {
                s.mask = match s.mask.take() {
                    Some(m) if !m.is_empty() => Some(match style {
                        GuidanceStyle::Segmentation => m,
                        GuidanceStyle::Bbox => mask_to_bbox(&m)?,
                        GuidanceStyle::Scribble => mask_to_scribble(&m, scribble_width)?,
                    }),
                    _ => None,
                };
            }
        }
        Ok(())
    }

    /// Writes the layout, plus `synth_meta.json` when a generator config is given.
    pub fn write(&self, root: &Path, meta: Option<&SynthConfig>) -> Result<()> {
        for (i, name) in SPLITS.iter().enumerate() {
            let dir = root.join(name);
            for sub in ["images", "masks"] {
                fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
            }
            let labels = dir.join("labels.csv");
            let mut w =
                csv::Writer::from_path(&labels).map_err(|e| Error::load(&labels, e.to_string()))?;
            for s in self.split(i) {
                let file = s.filename();
                write_image(&dir.join("images").join(&file), &s.image)?;
                if let Some(m) = &s.mask {
                    write_mask(&dir.join("masks").join(&file), m)?;
                }
                w.serialize(LabelRow {
                    study_id: s.study_id.clone(),
                    view: s.view.clone(),
                    filename: file,
                    label: self.class_names[s.label].clone(),
                })
                .map_err(|e| Error::load(&labels, e.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&labels, e))?;
        }
        if let Some(cfg) = meta {
            let p = root.join(META_FILE);
            let text = serde_json::to_string_pretty(cfg).expect("config serializes");
            fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Loads every split under `root`. Class names come from `class_names` or,
    /// failing that, from the generator config in `synth_meta.json`. Labels may
    /// be class names or indices.
    pub fn load(root: &Path, class_names: Option<&[String]>) -> Result<Self> {
        let names = match class_names {
            Some(n) => n.to_vec(),
            None => {
                let p = root.join(META_FILE);
                let text = fs::read_to_string(&p).map_err(|_| {
                    Error::load(
                        &p,
                        "no class list given and no generator metadata to derive one from",
                    )
                })?;
                let cfg: SynthConfig =
                    serde_json::from_str(&text).map_err(|e| Error::load(&p, e.to_string()))?;
                cfg.class_names()
            }
        };
        contract!(
            names.len() >= 2,
            "need at least two classes, got {}",
            names.len()
        );
        let mut ds = Dataset::empty(names);
        for (i, name) in SPLITS.iter().enumerate() {
            let samples = load_split(&root.join(name), &ds.class_names)?;
            *ds.split_mut(i) = samples;
        }
        Ok(ds)
    }
}

fn load_split(dir: &Path, class_names: &[String]) -> Result<Vec<Sample>> {
    let labels = dir.join("labels.csv");
    if !labels.exists() {
        let images = dir.join("images");
        let has_images = fs::read_dir(&images)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if has_images {
            return Err(Error::load(&labels, "missing label file"));
        }
        return Ok(Vec::new());
    }
    let mut rdr =
        csv::Reader::from_path(&labels).map_err(|e| Error::load(&labels, e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::load(&labels, e.to_string()))?;
        let label = class_names
            .iter()
            .position(|n| *n == row.label)
            .or_else(|| {
                row.label
                    .parse::<usize>()
                    .ok()
                    .filter(|&i| i < class_names.len())
            })
            .ok_or_else(|| {
                Error::load(
                    &labels,
                    format!("unknown class {:?} for {}", row.label, row.filename),
                )
            })?;
        let image_path = dir.join("images").join(&row.filename);
        let image = read_image(&image_path)?;
        let mask_path = dir.join("masks").join(&row.filename);
        let mask = if mask_path.exists() {
            let m = read_mask(&mask_path)?;
            if m.height != image.height || m.width != image.width {
                return Err(Error::load(
                    &mask_path,
                    format!(
                        "mask is {}×{} but image is {}×{}",
                        m.height, m.width, image.height, image.width
                    ),
                ));
            }
            Some(m)
        } else {
            None
        };
        out.push(Sample {
            image,
            label,
            view: row.view,
            study_id: row.study_id,
            mask,
        });
    }
    Ok(out)
}
