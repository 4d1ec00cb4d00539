//! Online matching: pattern-level matching matrices, sub-sequence (SUB) and
//! pattern-based DTW scoring, score fusion, and the frame-level DTW baseline.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::features::FeatureSequence;
use crate::hmm::Granularity;
use crate::index::{ArchiveIndex, IndexEntry};
use crate::math;
use crate::similarity::{SimilarityMatrix, SimilarityMode};

/// One of the eight search methods: soft vs hard similarity, N-best
/// posteriorgrams vs 1-best indices, DTW vs SUB scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SearchMethod {
    pub soft: bool,
    pub nbest: bool,
    pub dtw: bool,
}

impl SearchMethod {
    pub const fn new(soft: bool, nbest: bool, dtw: bool) -> Self {
        Self { soft, nbest, dtw }
    }

    /// All eight methods in `000, 001, ..., 111` order.
    pub fn all() -> [SearchMethod; 8] {
        core::array::from_fn(|i| Self::new(i & 4 != 0, i & 2 != 0, i & 1 != 0))
    }

    pub fn similarity_mode(&self) -> SimilarityMode {
        if self.soft {
            SimilarityMode::Soft
        } else {
            SimilarityMode::Hard
        }
    }
}

impl fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.soft as u8, self.nbest as u8, self.dtw as u8)
    }
}

impl FromStr for SearchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let b = s.as_bytes();
        let bit = |c: u8| match c {
            b'0' => Ok(false),
            b'1' => Ok(true),
            _ => Err(Error::InvalidParameter(alloc::format!("bad search method '{s}'"))),
        };
        if b.len() != 3 {
            return Err(Error::InvalidParameter(alloc::format!("bad search method '{s}'")));
        }
        Ok(Self::new(bit(b[0])?, bit(b[1])?, bit(b[2])?))
    }
}

/// A (granularity, search method) configuration: one column of scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub psi: Granularity,
    pub method: SearchMethod,
}

impl fmt::Display for RunKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.psi, self.method)
    }
}

/// `D x Q` pattern similarities between a document and a query, row-major
/// over document positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl MatchingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `W(i,j) = S(d_i, q_j)` for 1-best methods and `P_i^T S P_j` for N-best ones.
pub fn build_matching_matrix(
    doc: &IndexEntry,
    query: &IndexEntry,
    sim: &SimilarityMatrix,
    method: SearchMethod,
) -> Result<MatchingMatrix> {
    for (what, psi) in [("document", doc.psi()), ("query", query.psi())] {
        if psi != sim.psi {
            return Err(Error::GranularityMismatch(alloc::format!(
                "{what} indexed under {psi}, similarity built for {}",
                sim.psi
            )));
        }
    }
    if sim.mode != method.similarity_mode() {
        return Err(Error::InvalidParameter(alloc::format!(
            "method {method} needs a {:?} similarity matrix, got {:?}",
            method.similarity_mode(),
            sim.mode
        )));
    }
    let (d_len, q_len) = (doc.transcription.tokens.len(), query.transcription.tokens.len());
    let mut values = Vec::with_capacity(d_len * q_len);
    if !method.nbest {
        let q: Vec<usize> = query.patterns();
        for dt in &doc.transcription.tokens {
            let row = sim.row(dt.pattern);
            values.extend(q.iter().map(|&qj| row[qj]));
        }
    } else {
        // u_j = S P_j, then W(i,j) = P_i . u_j
        let n = sim.size();
        let projected: Vec<Vec<f64>> = query
            .posteriorgram
            .positions
            .iter()
            .map(|pj| {
                let mut u = vec![0.0; n];
                for &(b, wb) in pj {
                    for (a, ua) in u.iter_mut().enumerate() {
                        *ua += sim.get(a, b) * wb;
                    }
                }
                u
            })
            .collect();
        for pi in &doc.posteriorgram.positions {
            for u in &projected {
                let w: f64 = pi.iter().map(|&(a, wa)| wa * u[a]).sum();
                values.push(w.clamp(0.0, 1.0));
            }
        }
    }
    MatchingMatrix::new(d_len, q_len, values)
}

/// Best diagonal alignment: `max_i sum_j W(i+j, j)`. A document shorter than
/// the query is slid inside the query instead and the best sum is divided
/// by the document length.
pub fn score_sub(w: &MatchingMatrix) -> f64 {
    let (d, q) = (w.rows, w.cols);
    if d >= q {
        (0..=d - q)
            .map(|i| (0..q).map(|j| w.get(i + j, j)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        (0..=q - d)
            .map(|k| (0..d).map(|i| w.get(i, k + i)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
            / d as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Report the raw best path sum for DTW instead of the path-length average.
    pub unnormalized: bool,
}

/// A DTW path: its sum and its number of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PathScore {
    sum: f64,
    len: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Step {
    Start,
    Diagonal,
    DocAdvance,
    QueryAdvance,
}

/// Best path for cell values `W - offset`: starts anywhere in the first query
/// column, ends anywhere in the last, moves by (1,0), (0,1) or (1,1).
/// Ties prefer the diagonal, then a document step, then a query step, then a
/// fresh start, and the lowest end row.
fn best_offset_path(w: &MatchingMatrix, offset: f64, value: &mut [f64], back: &mut [Step]) -> PathScore {
    let (d, q) = (w.rows, w.cols);
    for i in 0..d {
        for j in 0..q {
            let c = w.get(i, j) - offset;
            let mut best = (f64::NEG_INFINITY, Step::Start);
            let mut consider = |v: f64, s: Step| {
                if v > best.0 {
                    best = (v, s);
                }
            };
            if i > 0 && j > 0 {
                consider(value[(i - 1) * q + j - 1], Step::Diagonal);
            }
            if i > 0 {
                consider(value[(i - 1) * q + j], Step::DocAdvance);
            }
            if j > 0 {
                consider(value[i * q + j - 1], Step::QueryAdvance);
            }
            if j == 0 {
                consider(0.0, Step::Start);
            }
            value[i * q + j] = c + best.0;
            back[i * q + j] = best.1;
        }
    }
    let mut end = 0;
    for i in 1..d {
        if value[i * q + q - 1] > value[end * q + q - 1] {
            end = i;
        }
    }
    // walk back, then re-sum forwards in path order
    let mut cells = Vec::new();
    let (mut i, mut j) = (end, q - 1);
    loop {
        cells.push((i, j));
        match back[i * q + j] {
            Step::Start => break,
            Step::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Step::DocAdvance => i -= 1,
            Step::QueryAdvance => j -= 1,
        }
    }
    let sum = cells.iter().rev().map(|&(i, j)| w.get(i, j)).sum();
    PathScore { sum, len: cells.len() }
}

/// Pattern-based DTW: the best monotone path covering the whole query.
///
/// By default the path average `sum / length` is maximised. A max-ratio path
/// does not decompose over prefixes, so it is found by parametric search:
/// for offset `t` find the path maximising `sum(W - t)`; if its average beats
/// `t`, raise `t` to that average and repeat. Each round strictly increases
/// `t` and there are finitely many paths.
pub fn score_dtw(w: &MatchingMatrix, opts: ScoreOptions) -> f64 {
    let mut value = vec![0.0; w.rows * w.cols];
    let mut back = vec![Step::Start; w.rows * w.cols];
    let first = best_offset_path(w, 0.0, &mut value, &mut back);
    if opts.unnormalized {
        return first.sum;
    }
    let mut ratio = first.sum / first.len as f64;
    loop {
        let p = best_offset_path(w, ratio, &mut value, &mut back);
        let r = p.sum / p.len as f64;
        if r > ratio {
            ratio = r;
        } else {
            return ratio;
        }
    }
}

/// Relevance of one document to one query under one pattern set and method.
pub fn relevance(
    doc: &IndexEntry,
    query: &IndexEntry,
    sim: &SimilarityMatrix,
    method: SearchMethod,
    opts: ScoreOptions,
) -> Result<f64> {
    let w = build_matching_matrix(doc, query, sim, method)?;
    Ok(if method.dtw { score_dtw(&w, opts) } else { score_sub(&w) })
}

/// Cosine similarity mapped to `[0, 1]`; a zero vector scores as orthogonal.
fn frame_similarity(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    ((1.0 + dot / (na * nb)) / 2.0).clamp(0.0, 1.0)
}

/// Frame-level similarity matrix between document and query features.
pub fn frame_matching_matrix(query: &FeatureSequence, doc: &FeatureSequence) -> Result<MatchingMatrix> {
    if query.dim() != doc.dim() {
        return Err(Error::DimensionMismatch {
            expected: doc.dim(),
            actual: query.dim(),
        });
    }
    let norm = |f: &[f64]| math::sqrt(f.iter().map(|x| x * x).sum());
    let qn: Vec<f64> = query.frames().map(norm).collect();
    let mut values = Vec::with_capacity(doc.len() * query.len());
    for df in doc.frames() {
        let dn = norm(df);
        for (qf, &qnorm) in query.frames().zip(&qn) {
            values.push(frame_similarity(df, dn, qf, qnorm));
        }
    }
    MatchingMatrix::new(doc.len(), query.len(), values)
}

/// Conventional frame-based DTW on the feature sequences, with the same path
/// rules and normalisation as the pattern-based DTW.
pub fn frame_dtw_baseline(query: &FeatureSequence, doc: &FeatureSequence) -> Result<f64> {
    Ok(score_dtw(&frame_matching_matrix(query, doc)?, ScoreOptions::default()))
}

/// Scores `R(d, q)` for every (key, query, document), plus 0/1 fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTable {
    pub queries: Vec<String>,
    pub documents: Vec<String>,
    /// Query-major `Q x D` score block per key.
    scores: BTreeMap<RunKey, Vec<f64>>,
    pub weights: BTreeMap<RunKey, bool>,
}

impl RelevanceTable {
    pub fn new(queries: Vec<String>, documents: Vec<String>) -> Self {
        Self {
            queries,
            documents,
            scores: BTreeMap::new(),
            weights: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: RunKey, block: Vec<f64>) -> Result<()> {
        let expected = self.queries.len() * self.documents.len();
        if block.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: block.len(),
            });
        }
        self.scores.insert(key, block);
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &RunKey> {
        self.scores.keys()
    }

    pub fn block(&self, key: &RunKey) -> Option<&[f64]> {
        self.scores.get(key).map(Vec::as_slice)
    }

    pub fn score(&self, key: &RunKey, query: usize, doc: usize) -> Option<f64> {
        self.scores.get(key).map(|b| b[query * self.documents.len() + doc])
    }

    pub fn query_index(&self, id: &str) -> Option<usize> {
        self.queries.iter().position(|q| q == id)
    }

    /// Enables every key that has scores.
    pub fn enable_all(&mut self) {
        self.weights = self.scores.keys().map(|k| (*k, true)).collect();
    }

    pub fn enabled(&self) -> impl Iterator<Item = &RunKey> {
        self.weights.iter().filter(|(_, on)| **on).map(|(k, _)| k)
    }

    /// Weighted sum over all enabled keys, `Q x D` query-major.
    pub fn fuse(&self) -> Result<Vec<f64>> {
        self.fuse_keys(self.enabled())
    }

    /// Sum of the blocks of `keys`; the order of summation follows `keys`.
    pub fn fuse_keys<'a>(&self, keys: impl IntoIterator<Item = &'a RunKey>) -> Result<Vec<f64>> {
        let mut fused = vec![0.0; self.queries.len() * self.documents.len()];
        for key in keys {
            let block = self
                .scores
                .get(key)
                .ok_or_else(|| Error::MissingScores(alloc::format!("{key}")))?;
            fused.iter_mut().zip(block).for_each(|(f, r)| *f += r);
        }
        Ok(fused)
    }
}

/// Scores every query against every document of one index for the given
/// methods. Utterances missing from the index (decode failures) score 0.
#[allow(clippy::too_many_arguments)]
pub fn score_index<E: Executor>(
    docs: &ArchiveIndex,
    doc_ids: &[String],
    queries: &BTreeMap<String, IndexEntry>,
    query_ids: &[String],
    hard: &SimilarityMatrix,
    soft: Option<&SimilarityMatrix>,
    methods: &[SearchMethod],
    opts: ScoreOptions,
    exec: &E,
) -> Result<BTreeMap<SearchMethod, Vec<f64>>> {
    if methods.iter().any(|m| m.soft) && soft.is_none() {
        return Err(Error::MissingScores("soft similarity matrix".into()));
    }
    let rows: Vec<Result<Vec<Vec<f64>>>> = exec.map(query_ids, |qid| {
        let mut per_method = vec![vec![0.0; doc_ids.len()]; methods.len()];
        let Some(query) = queries.get(qid) else {
            return Ok(per_method);
        };
        for (di, did) in doc_ids.iter().enumerate() {
            let Some(doc) = docs.entries.get(did) else {
                continue;
            };
            let mut cache: BTreeMap<(bool, bool), MatchingMatrix> = BTreeMap::new();
            for (mi, m) in methods.iter().enumerate() {
                let w = match cache.get(&(m.soft, m.nbest)) {
                    Some(w) => w,
                    None => {
                        let sim = if m.soft { soft.expect("checked above") } else { hard };
                        let w = build_matching_matrix(doc, query, sim, *m)?;
                        cache.entry((m.soft, m.nbest)).or_insert(w)
                    }
                };
                per_method[mi][di] = if m.dtw { score_dtw(w, opts) } else { score_sub(w) };
            }
        }
        Ok(per_method)
    });
    let mut out: BTreeMap<SearchMethod, Vec<f64>> = methods.iter().map(|m| (*m, Vec::new())).collect();
    for row in rows {
        let row = row?;
        for (m, scores) in methods.iter().zip(row) {
            out.get_mut(m).expect("method present").extend(scores);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{NBestList, Token, Transcription};
    use crate::index::{build_posteriorgram, IndexEntry};
    use proptest::prelude::*;

    fn entry(patterns: &[usize], psi: Granularity) -> IndexEntry {
        let tokens: Vec<Token> = patterns
            .iter()
            .enumerate()
            .map(|(i, &p)| Token { pattern: p, start: 2 * i, end: 2 * i + 1 })
            .collect();
        let tr = Transcription {
            utterance_id: "x".into(),
            tokens,
            log_likelihood: 0.0,
        };
        let nbest = NBestList {
            utterance_id: "x".into(),
            entries: vec![tr.clone()],
        };
        let posteriorgram = build_posteriorgram(&nbest, &tr, psi).unwrap();
        IndexEntry {
            transcription: tr,
            nbest,
            posteriorgram,
        }
    }

    /// Every legal DTW path (start in column 0, end in the last column).
    fn all_paths(d: usize, q: usize) -> Vec<Vec<(usize, usize)>> {
        fn extend(d: usize, q: usize, path: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
            let (i, j) = *path.last().unwrap();
            if j == q - 1 {
                out.push(path.clone());
            }
            for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                if i + di < d && j + dj < q {
                    path.push((i + di, j + dj));
                    extend(d, q, path, out);
                    path.pop();
                }
            }
        }
        let mut out = Vec::new();
        for i0 in 0..d {
            extend(d, q, &mut vec![(i0, 0)], &mut out);
        }
        out
    }

    fn oracle_dtw(w: &MatchingMatrix, normalized: bool) -> f64 {
        all_paths(w.rows(), w.cols())
            .iter()
            .map(|p| {
                let s: f64 = p.iter().map(|&(i, j)| w.get(i, j)).sum();
                if normalized {
                    s / p.len() as f64
                } else {
                    s
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn method_codes_roundtrip() {
        let all = SearchMethod::all();
        assert_eq!(all[4], SearchMethod::new(true, false, false));
        assert_eq!(all[4].to_string(), "100");
        for m in all {
            assert_eq!(m.to_string().parse::<SearchMethod>().unwrap(), m);
        }
        let mut sorted = all.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        assert!("12".parse::<SearchMethod>().is_err());
    }

    #[test]
    fn hard_identical_sequences_give_index_equality() {
        let psi = Granularity::new(1, 4, 1).unwrap();
        let e = entry(&[0, 2, 2, 3], psi);
        let w = build_matching_matrix(&e, &e, &SimilarityMatrix::identity(psi), SearchMethod::new(false, false, false)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let same = e.patterns()[i] == e.patterns()[j];
                assert_eq!(w.get(i, j), if same { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(score_sub(&w), 4.0);
        assert_eq!(score_dtw(&w, ScoreOptions::default()), 1.0);
        let nb = build_matching_matrix(&e, &e, &SimilarityMatrix::identity(psi), SearchMethod::new(false, true, false)).unwrap();
        assert_eq!(nb, w);
    }

    #[test]
    fn bilinear_form_value() {
        let psi = Granularity::new(1, 2, 1).unwrap();
        let sim = SimilarityMatrix::from_values(psi, SimilarityMode::Soft, 1.0, vec![1.0, 0.4, 0.4, 1.0]).unwrap();
        let mut doc = entry(&[0], psi);
        doc.posteriorgram.positions = vec![vec![(0, 0.75), (1, 0.25)]];
        let mut query = entry(&[0], psi);
        query.posteriorgram.positions = vec![vec![(0, 0.5), (1, 0.5)]];
        let w = build_matching_matrix(&doc, &query, &sim, SearchMethod::new(true, true, false)).unwrap();
        assert!((w.get(0, 0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mismatched_artifacts_rejected() {
        let psi = Granularity::new(1, 2, 1).unwrap();
        let other = Granularity::new(2, 2, 1).unwrap();
        let e = entry(&[0, 1], psi);
        let hard = SimilarityMatrix::identity(other);
        assert!(matches!(
            build_matching_matrix(&e, &e, &hard, SearchMethod::new(false, false, false)),
            Err(Error::GranularityMismatch(_))
        ));
        let hard = SimilarityMatrix::identity(psi);
        assert!(build_matching_matrix(&e, &e, &hard, SearchMethod::new(true, false, false)).is_err());
    }

    #[test]
    fn sub_offsets_and_short_documents() {
        let zero = MatchingMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert_eq!(score_sub(&zero), 0.0);
        let w = MatchingMatrix::new(5, 3, vec![
            0.1, 0.9, 0.3, //
            0.2, 0.5, 0.7, //
            0.8, 0.4, 0.6, //
            0.3, 0.9, 0.2, //
            0.0, 0.1, 0.5, //
        ])
        .unwrap();
        // offsets: 0.1+0.5+0.6, 0.2+0.4+0.2, 0.8+0.9+0.5
        let expected = [1.2f64, 0.8, 2.2].into_iter().fold(0.0, f64::max);
        assert!((score_sub(&w) - expected).abs() < 1e-12);
        let short = MatchingMatrix::new(2, 3, vec![1.0, 0.0, 0.5, 0.0, 0.5, 1.0]).unwrap();
        // windows: (1.0 + 0.5) / 2 and (0.0 + 1.0) / 2
        assert_eq!(score_sub(&short), 0.75);
    }

    #[test]
    fn dtw_single_cell_and_known_values() {
        let one = MatchingMatrix::new(1, 1, vec![0.37]).unwrap();
        assert_eq!(score_dtw(&one, ScoreOptions::default()), 0.37);
        let w = MatchingMatrix::new(4, 3, vec![0.5, 0.0, 1.0, 1.0, 0.5, 0.0, 0.0, 1.0, 0.5, 1.0, 0.0, 1.0]).unwrap();
        assert!((score_dtw(&w, ScoreOptions::default()) - oracle_dtw(&w, true)).abs() < 1e-12);
        assert!((score_dtw(&w, ScoreOptions { unnormalized: true }) - oracle_dtw(&w, false)).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_4x3_half_grid() {
        // a sample of the 3^12 matrices with entries in {0, 1/2, 1}
        for code in (0..531_441u32).step_by(997) {
            let mut c = code;
            let vals: Vec<f64> = (0..12)
                .map(|_| {
                    let v = (c % 3) as f64 / 2.0;
                    c /= 3;
                    v
                })
                .collect();
            let w = MatchingMatrix::new(4, 3, vals).unwrap();
            assert!((score_dtw(&w, ScoreOptions::default()) - oracle_dtw(&w, true)).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_baseline_extremes() {
        let a = FeatureSequence::from_frames("a", &[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.2, 0.2]]).unwrap();
        assert!((frame_dtw_baseline(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let x = FeatureSequence::from_frames("x", &vec![vec![1.0, 0.0]; 4]).unwrap();
        let y = FeatureSequence::from_frames("y", &vec![vec![0.0, 2.0]; 3]).unwrap();
        assert_eq!(frame_dtw_baseline(&x, &y).unwrap(), 0.5);
        let z = FeatureSequence::from_frames("z", &[vec![0.0; 3]]).unwrap();
        assert!(frame_dtw_baseline(&x, &z).is_err());
    }

    #[test]
    fn fusion_sums_enabled_blocks() {
        let psi = Granularity::new(1, 2, 1).unwrap();
        let k1 = RunKey { psi, method: SearchMethod::new(false, false, false) };
        let k2 = RunKey { psi, method: SearchMethod::new(true, false, false) };
        let mut t = RelevanceTable::new(vec!["q".into()], vec!["d".into()]);
        t.insert(k1, vec![0.3]).unwrap();
        t.insert(k2, vec![0.5]).unwrap();
        assert_eq!(t.fuse().unwrap(), vec![0.0]);
        t.weights.insert(k1, true);
        assert_eq!(t.fuse().unwrap(), vec![0.3]);
        t.weights.insert(k2, true);
        assert_eq!(t.fuse().unwrap(), vec![0.8]);
        t.weights.insert(RunKey { psi: psi.with_l(2), method: k1.method }, true);
        assert!(matches!(t.fuse(), Err(Error::MissingScores(_))));
        assert!(t.insert(k1, vec![0.0, 1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn scores_match_path_enumeration(
            d in 1usize..7, q in 1usize..6,
            vals in proptest::collection::vec(0.0f64..1.0, 30),
        ) {
            let w = MatchingMatrix::new(d, q, vals[..d * q].to_vec()).unwrap();
            prop_assert!((score_dtw(&w, ScoreOptions::default()) - oracle_dtw(&w, true)).abs() < 1e-12);
            let raw = score_dtw(&w, ScoreOptions { unnormalized: true });
            prop_assert!((raw - oracle_dtw(&w, false)).abs() < 1e-12);
            if d >= q {
                let brute = (0..=d - q)
                    .map(|i| (0..q).map(|j| w.get(i + j, j)).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((score_sub(&w) - brute).abs() < 1e-12);
                // the DTW search space contains the best SUB diagonal
                prop_assert!(score_dtw(&w, ScoreOptions::default()) >= score_sub(&w) / q as f64 - 1e-12);
            }
        }

        #[test]
        fn raising_an_entry_never_lowers_scores(
            d in 1usize..6, q in 1usize..5,
            vals in proptest::collection::vec(0.0f64..1.0, 30),
            at in 0usize..30, bump in 0.0f64..1.0,
        ) {
            let base = MatchingMatrix::new(d, q, vals[..d * q].to_vec()).unwrap();
            let mut raised = vals[..d * q].to_vec();
            let k = at % (d * q);
            raised[k] = (raised[k] + bump).min(1.0);
            let raised = MatchingMatrix::new(d, q, raised).unwrap();
            prop_assert!(score_sub(&raised) >= score_sub(&base));
            prop_assert!(score_dtw(&raised, ScoreOptions::default()) >= score_dtw(&base, ScoreOptions::default()) - 1e-12);
        }
    }
}
