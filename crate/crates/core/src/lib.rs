//! Human-guided attention regularization for CNN image classifiers.
//!
//! The crate provides a small reverse-mode autodiff engine, a residual
//! backbone, class activation maps with a spatial self-attention prediction
//! head, the guided attention loss, a synthetic spurious-correlation
//! benchmark and the training/evaluation harness around them.

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod head;
pub mod loss;
pub mod stats;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
