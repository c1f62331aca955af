//! Hyperspectral tree-crown analytics.
//!
//! The pipeline: load (or synthesize) a reflectance hypercube, extract
//! individual crowns, compute 21 vegetation indices per pixel, average them
//! over concentric crown segments, quantize each index into four
//! equal-frequency bands, train a self-supervised embedding of the 84 bands
//! against Jaccard co-occurrence targets, assemble per-tree embedding
//! vectors, and run the clustering / classification / characterization
//! analyses on top.

pub mod analysis;
pub mod artifacts;
pub mod banding;
pub mod config;
pub mod embed;
pub mod error;
pub mod hypercube;
pub mod pipeline;
pub mod segments;
pub mod synth;
pub mod treevec;
pub mod treex;
pub mod vegindex;

pub use config::PipelineConfig;
pub use error::{Error, Result};
