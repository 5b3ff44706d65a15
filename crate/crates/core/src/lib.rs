//! Exocentric-to-egocentric cross-view toolkit: paired dataset model,
//! procedural scene generator, optical flow, conditional-GAN synthesis,
//! two-stream contrastive retrieval, evaluation metrics and probes.

pub mod checkpoint;
pub mod data;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod imgproc;
pub mod metrics;
pub mod probes;
pub mod retrieval;
pub mod synthesis;
pub mod toygen;

pub use error::{Error, Result};
