//! Command-line pipeline around [`mgpat_core`]: WAV input and MFCC
//! extraction, the on-disk artifact formats, and one command per stage.
//!
//! ```text
//! mgpat synth       synthetic corpus with planted units
//! mgpat features    manifest -> feature files
//! mgpat discover    features -> pattern bundles per (m, n, l)
//! mgpat similarity  bundles -> hard and soft similarity matrices
//! mgpat index       bundles + features -> 1-best / N-best / posteriorgram indexes
//! mgpat search      indexes + matrices -> score table and fused rankings
//! mgpat evaluate    score table + judgments -> MAP, selection traces, marginals
//! mgpat bench       frame DTW vs pattern matching latency
//! ```

pub mod audio;
pub mod bench;
pub mod binio;
pub mod bundle;
pub mod config;
pub mod error;
pub mod exec;
pub mod featfile;
pub mod indexfile;
pub mod manifest;
pub mod mfcc;
pub mod pipeline;
pub mod scorefile;
pub mod simfile;
pub mod stamp;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{Pipeline, Stage};
