//! Online latency of pattern-level matching against frame-level DTW.

use std::fmt::Write as _;
use std::time::Instant;

use mgpat_core::{
    build_matching_matrix, frame_dtw_baseline, score_dtw, score_sub, ArchiveIndex, FeatureSequence, Granularity,
    ScoreOptions, SearchMethod, SimilarityMatrix,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub psi: Granularity,
    pub pairs: usize,
    pub feature_dim: usize,
    pub mean_query_frames: f64,
    pub mean_doc_frames: f64,
    pub mean_query_tokens: f64,
    pub mean_doc_tokens: f64,
    /// Mean per-pair latency in microseconds.
    pub frame_dtw_us: f64,
    pub sub_us: f64,
    pub dtw_us: f64,
}

impl BenchReport {
    pub fn sub_speedup(&self) -> f64 {
        self.frame_dtw_us / self.sub_us
    }

    pub fn dtw_speedup(&self) -> f64 {
        self.frame_dtw_us / self.dtw_us
    }

    /// `F * m^2`: the frame matrix has roughly `m^2` times the cells of the
    /// token matrix when a token spans about `m` frames, and each frame cell
    /// costs `F` multiply-adds.
    pub fn theoretical_factor(&self) -> f64 {
        (self.feature_dim * self.psi.m * self.psi.m) as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "psi {}", self.psi);
        let _ = writeln!(s, "pairs {}", self.pairs);
        let _ = writeln!(
            s,
            "mean frames: query {:.1}, document {:.1}; mean tokens: query {:.1}, document {:.1}",
            self.mean_query_frames, self.mean_doc_frames, self.mean_query_tokens, self.mean_doc_tokens
        );
        let _ = writeln!(s, "frame_dtw_baseline mean latency {:.2} us/pair", self.frame_dtw_us);
        let _ = writeln!(s, "pattern SUB mean latency {:.2} us/pair (ratio {:.1}x)", self.sub_us, self.sub_speedup());
        let _ = writeln!(s, "pattern DTW mean latency {:.2} us/pair (ratio {:.1}x)", self.dtw_us, self.dtw_speedup());
        let _ = writeln!(s, "theoretical factor F*m^2 = {:.0}", self.theoretical_factor());
        s
    }
}

fn mean_us<T>(pairs: &[(usize, usize)], repeats: usize, mut f: impl FnMut(usize, usize) -> T) -> f64 {
    let start = Instant::now();
    for _ in 0..repeats {
        for &(q, d) in pairs {
            std::hint::black_box(f(q, d));
        }
    }
    start.elapsed().as_secs_f64() * 1e6 / (repeats * pairs.len()) as f64
}

/// Times every query against every document, single-threaded. Query
/// decoding is excluded from the pattern timings: it happens once per query,
/// not once per pair.
pub fn bench_pairs(
    queries: &[FeatureSequence],
    docs: &[FeatureSequence],
    doc_index: &ArchiveIndex,
    query_index: &ArchiveIndex,
    hard: &SimilarityMatrix,
    repeats: usize,
) -> Result<BenchReport> {
    let mut pairs = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        for (di, d) in docs.iter().enumerate() {
            if query_index.entries.contains_key(&q.utterance_id) && doc_index.entries.contains_key(&d.utterance_id) {
                pairs.push((qi, di));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data("no indexed query/document pairs to time".into()));
    }
    let repeats = repeats.max(1);
    let q_entry = |i: usize| &query_index.entries[&queries[i].utterance_id];
    let d_entry = |i: usize| &doc_index.entries[&docs[i].utterance_id];
    let one_best: SearchMethod = "000".parse().expect("valid code");

    let frame_dtw_us = mean_us(&pairs, repeats, |q, d| frame_dtw_baseline(&queries[q], &docs[d]));
    let sub_us = mean_us(&pairs, repeats, |q, d| {
        build_matching_matrix(d_entry(d), q_entry(q), hard, one_best).map(|w| score_sub(&w))
    });
    let dtw_us = mean_us(&pairs, repeats, |q, d| {
        build_matching_matrix(d_entry(d), q_entry(q), hard, one_best).map(|w| score_dtw(&w, ScoreOptions::default()))
    });

    let mean = |v: Vec<usize>| v.iter().sum::<usize>() as f64 / v.len().max(1) as f64;
    Ok(BenchReport {
        psi: doc_index.psi,
        pairs: pairs.len(),
        feature_dim: queries[0].dim(),
        mean_query_frames: mean(queries.iter().map(|q| q.len()).collect()),
        mean_doc_frames: mean(docs.iter().map(|d| d.len()).collect()),
        mean_query_tokens: mean(query_index.entries.values().map(|e| e.transcription.tokens.len()).collect()),
        mean_doc_tokens: mean(doc_index.entries.values().map(|e| e.transcription.tokens.len()).collect()),
        frame_dtw_us,
        sub_us,
        dtw_us,
    })
}
