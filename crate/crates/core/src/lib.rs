//! Metric learning for player re-identification.
//!
//! The pipeline: a synthetic or loaded [`data::Dataset`] of detections,
//! metadata-aware batch [`sampler`]s, an [`model::EmbeddingNet`] trained
//! with the [`losses`] on a small reverse-mode autodiff engine
//! ([`numerics`]), and per-action retrieval metrics from [`eval`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod sampler;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
