//! Run specification files shared by the `train`, `eval`, `sweep` and `viz`
//! commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::SPLITS;
use crate::error::{Error, Result};
use crate::loss::LossMode;
use crate::train::{StyleChoice, TrainConfig};
use crate::viz::HeatmapMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// λ grid; 0 is always added as the baseline.
    pub lambdas: Vec<f64>,
    pub styles: Vec<StyleChoice>,
    pub modes: Vec<LossMode>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.1, 1.0, 10.0, 100.0],
            styles: vec![StyleChoice::Segmentation],
            modes: vec![LossMode::Guidance],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VizSpec {
    pub split: String,
    /// Image filenames to render; empty means the first `count` of the split.
    pub samples: Vec<String>,
    pub count: usize,
    pub modes: Vec<HeatmapMode>,
}

impl Default for VizSpec {
    fn default() -> Self {
        Self {
            split: "test".into(),
            samples: Vec::new(),
            count: 4,
            modes: vec![HeatmapMode::RawCam],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Class order; defaults to the generator metadata stored with the dataset.
    pub class_names: Option<Vec<String>>,
    pub n_seeds: usize,
    /// Train on train ∪ val.
    pub merge_val: bool,
    pub eval_split: String,
    /// Fill `wall_time_s` in metrics files. Off by default so reruns are
    /// byte-identical.
    pub record_time: bool,
    pub train: TrainConfig,
    pub sweep: SweepSpec,
    pub viz: VizSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            dataset: None,
            out: None,
            class_names: None,
            n_seeds: 5,
            merge_val: true,
            eval_split: "test".into(),
            record_time: false,
            train: TrainConfig::default(),
            sweep: SweepSpec::default(),
            viz: VizSpec::default(),
        }
    }
}

fn check_split(name: &str) -> Result<()> {
    if SPLITS.contains(&name) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unknown split {name:?}; expected train, val or test"
        )))
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        check_split(&self.eval_split)?;
        check_split(&self.viz.split)?;
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be ≥ 1".into()));
        }
        if self
            .sweep
            .lambdas
            .iter()
            .any(|l| !(l.is_finite() && *l >= 0.0))
        {
            return Err(Error::Config(
                "sweep lambdas must be finite and non-negative".into(),
            ));
        }
        if self.sweep.styles.is_empty() || self.sweep.modes.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one style and one mode".into(),
            ));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        let d = self.dataset.as_deref().ok_or_else(|| {
            Error::Config("no dataset path given (set \"dataset\" in the config)".into())
        })?;
        if !d.is_dir() {
            return Err(Error::Config(format!(
                "dataset directory {} does not exist",
                d.display()
            )));
        }
        Ok(d)
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given (use --out or \"out\")".into()))
    }
}

/// Reads a strict JSON config, or the defaults when no path is given.
pub fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("config types serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = serde_json::from_str::<RunSpec>(r#"{"epochz": 3}"#).unwrap_err();
        assert!(e.to_string().contains("epochz"));
        let e = serde_json::from_str::<RunSpec>(r#"{"train": {"lamda": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("lamda"));
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let s: RunSpec =
            serde_json::from_str(r#"{"train": {"epochs": 3, "guidance_style": "bbox"}}"#).unwrap();
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.guidance_style, StyleChoice::Bbox);
        assert_eq!(s.train.momentum, 0.9);
        assert_eq!(s.n_seeds, 5);
    }

    #[test]
    fn defaults_round_trip() {
        let s = RunSpec::default();
        let back: RunSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn bad_split_is_config_error() {
        let s = RunSpec {
            eval_split: "holdout".into(),
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }
}
