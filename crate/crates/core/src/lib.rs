//! Allocation-only building blocks for zero-shot posture classification.
//!
//! Everything here is a pure function of its inputs: cosine scoring against
//! per-class prompt embeddings, temperature calibration, classification
//! metrics, keypoint geometry for the pose baseline, attribution-map
//! statistics and a small linear probe. Nothing touches the filesystem; the
//! `posepilot` crate carries IO, encoders, the CLI and the HTTP service.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod label;
mod math;
pub mod metrics;
pub mod mock;
pub mod posebaseline;
pub mod probe;
pub mod prompts;
pub mod report;
pub mod saliency;
pub mod zeroshot;

pub use embedding::Embedding;
pub use error::{Error, Result};
pub use label::{ClassLabel, Split, Task};
