//! Filesystem, encoder, CLI and HTTP layers around `posepilot-core`.

pub mod backend;
pub mod classify;
pub mod cli;
pub mod coco;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod harness;
pub mod manifest;
pub mod pose;
pub mod promptsets;
pub mod saliency;
pub mod scores;
pub mod service;
pub mod tables;

pub use error::{Error, Result};
