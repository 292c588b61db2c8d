//! Illumination-gated two-stream encoder/decoder for RGB-thermal salient
//! object detection: training, inference, ablation variants, and the
//! standard saliency evaluation suite, on CPU via candle.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod illumination;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scp;
pub mod train;

pub use error::{Error, Result};
