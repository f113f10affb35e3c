//! Sliding-window powerset speaker diarization.

pub mod aggregate;
pub mod annotation;
pub mod audio;
pub mod cluster;
pub mod config;
pub mod embedding;
pub mod error;
pub mod frames;
pub mod pipeline;
pub mod plda;
pub mod powerset;
pub mod reconstruct;
pub mod rttm;
pub mod scoring;
pub mod synthgen;

pub use error::{Error, Result};
