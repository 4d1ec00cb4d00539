//! Multi-granularity acoustic pattern discovery and pattern-level spoken term
//! matching.
//!
//! This crate holds the numerical core and is `no_std` (it needs `alloc`).
//! Everything that touches the filesystem, audio codecs, FFTs or threads lives
//! in the companion `mgpat` crate.
//!
//! The pipeline is split into an offline and an online half:
//!
//! ```text
//! features -> discovery (per granularity m,n,l) -> similarity matrices
//!                                               -> archive index (1-best, N-best, posteriorgrams)
//! query features -> decode -> matching matrix W -> SUB / DTW score -> fusion -> ranking
//! ```

#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod discovery;
pub mod error;
pub mod eval;
pub mod exec;
pub mod features;
pub mod hmm;
pub mod index;
pub mod kmeans;
pub mod math;
pub mod retrieval;
pub mod similarity;
pub mod synth;

pub use discovery::{
    discover, grow_gaussians, initialize_labels, run_grid, Discovered, DiscoveryConfig, GridResult,
};
pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use features::{FeatureConfig, FeatureSequence};
pub use hmm::{
    baum_welch, nbest_decode, viterbi_free_decode, Granularity, NBestList, PatternHmm, PatternSet,
    Token, Transcription,
};
pub use index::{build_index, build_posteriorgram, ArchiveIndex, IndexEntry, Posteriorgram};
pub use retrieval::{
    build_matching_matrix, frame_dtw_baseline, relevance, score_dtw, score_sub, MatchingMatrix,
    RelevanceTable, RunKey, ScoreOptions, SearchMethod,
};
pub use similarity::{build_similarity, SimilarityMatrix, SimilarityMode};
