//! Unsupervised pattern discovery: initial labels from segment clustering,
//! then alternating re-estimation with fixed labels and free-pattern
//! re-decoding until the labels settle. Also Gaussian-increment continuation
//! and orchestration over a granularity grid.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::features::FeatureSequence;
use crate::hmm::train::{renormalize, reseed_dead, SPLIT_OFFSET};
use crate::hmm::{
    baum_welch_with, corpus_variance_floor, fixed_label_log_likelihood, viterbi_free_decode, Granularity,
    IterationLog, MixtureState, PatternHmm, PatternSet, Token, Transcription, MAX_SELF_LOOP, MIN_SELF_LOOP,
};
use crate::kmeans::{kmeans, KMeansOptions};
use crate::math::{self, mix_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryConfig {
    pub grid: Vec<Granularity>,
    pub max_iterations: usize,
    /// Stop once the fraction of frames whose label changed drops below this.
    pub convergence_threshold: f64,
    pub seed: u64,
    /// Baum-Welch passes per discovery iteration.
    pub em_iterations: usize,
    pub kmeans_restarts: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            grid: Vec::new(),
            max_iterations: 10,
            convergence_threshold: 0.01,
            seed: 0,
            em_iterations: 2,
            kmeans_restarts: 10,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.em_iterations == 0 {
            return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold <= 1.0) {
            return Err(Error::InvalidParameter("convergence threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Seed used for the `(m, n)` cell; independent of grid order.
    pub fn cell_seed(&self, psi: Granularity) -> u64 {
        mix_seed(self.seed, ((psi.m as u64) << 32) | psi.n as u64)
    }
}

/// A converged pattern set together with the labels it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovered {
    pub set: PatternSet,
    pub labels: Vec<Transcription>,
}

fn check_corpus(corpus: &[FeatureSequence], psi: Granularity) -> Result<()> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    for fs in corpus {
        if fs.dim() != first.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                actual: fs.dim(),
            });
        }
        if fs.len() < psi.m {
            return Err(Error::UtteranceTooShort {
                utterance: fs.utterance_id.clone(),
                frames: fs.len(),
                required: psi.m,
            });
        }
    }
    Ok(())
}

/// Uniform tiling into segments of `3 m` frames, the last one absorbing the
/// remainder.
fn uniform_segments(num_frames: usize, m: usize) -> Vec<(usize, usize)> {
    let target = 3 * m;
    let count = (num_frames / target).max(1);
    (0..count)
        .map(|i| {
            let start = i * target;
            let end = if i + 1 == count { num_frames - 1 } else { start + target - 1 };
            (start, end)
        })
        .collect()
}

fn segment_mean(fs: &FeatureSequence, start: usize, end: usize) -> Vec<f64> {
    let mut mean = vec![0.0; fs.dim()];
    for t in start..=end {
        mean.iter_mut().zip(fs.frame(t)).for_each(|(a, x)| *a += x);
    }
    let len = (end + 1 - start) as f64;
    mean.iter_mut().for_each(|a| *a /= len);
    mean
}

/// Initial labels: uniform `3 m`-frame segments clustered into `n` groups by
/// k-means on their mean vectors.
pub fn initialize_labels(
    corpus: &[FeatureSequence],
    psi: Granularity,
    seed: u64,
    restarts: usize,
) -> Result<Vec<Transcription>> {
    check_corpus(corpus, psi)?;
    let segs: Vec<Vec<(usize, usize)>> = corpus.iter().map(|fs| uniform_segments(fs.len(), psi.m)).collect();
    let points: Vec<Vec<f64>> = corpus
        .iter()
        .zip(&segs)
        .flat_map(|(fs, ss)| ss.iter().map(move |&(s, e)| segment_mean(fs, s, e)))
        .collect();
    if points.len() < psi.n {
        return Err(Error::InsufficientData {
            segments: points.len(),
            n: psi.n,
        });
    }
    let clusters = kmeans(
        &points,
        psi.n,
        &KMeansOptions {
            restarts,
            max_iterations: 100,
            seed,
        },
    )?;
    let mut next = clusters.assignments.into_iter();
    Ok(corpus
        .iter()
        .zip(segs)
        .map(|(fs, ss)| Transcription {
            utterance_id: fs.utterance_id.clone(),
            tokens: ss
                .into_iter()
                .map(|(start, end)| Token {
                    pattern: next.next().expect("one assignment per segment"),
                    start,
                    end,
                })
                .collect(),
            log_likelihood: 0.0,
        })
        .collect())
}

/// Single-Gaussian models estimated by splitting every labelled segment
/// evenly across the `m` states.
pub fn flat_start(
    corpus: &[FeatureSequence],
    labels: &[Transcription],
    psi: Granularity,
    variance_floor: &[f64],
) -> Result<PatternSet> {
    let dim = variance_floor.len();
    let (m, n) = (psi.m, psi.n);
    let mut count = vec![0usize; n * m];
    let mut sum = vec![0.0; n * m * dim];
    let mut sumsq = vec![0.0; n * m * dim];
    let mut frames_per_pattern = vec![0usize; n];
    for (fs, tr) in corpus.iter().zip(labels) {
        tr.validate(fs.len(), m, n)?;
        for tok in &tr.tokens {
            let len = tok.len();
            frames_per_pattern[tok.pattern] += len;
            for s in 0..m {
                let a = tok.start + s * len / m;
                let b = tok.start + (s + 1) * len / m;
                let ps = tok.pattern * m + s;
                for t in a..b {
                    count[ps] += 1;
                    for (d, x) in fs.frame(t).iter().enumerate() {
                        sum[ps * dim + d] += x;
                        sumsq[ps * dim + d] += x * x;
                    }
                }
            }
        }
    }
    let mut segments = vec![0usize; n];
    for tr in labels {
        for tok in &tr.tokens {
            segments[tok.pattern] += 1;
        }
    }
    let hmms = (0..n)
        .map(|p| PatternHmm {
            index: p,
            states: (0..m)
                .map(|s| {
                    let ps = p * m + s;
                    let c = count[ps].max(1) as f64;
                    let mean: Vec<f64> = (0..dim).map(|d| sum[ps * dim + d] / c).collect();
                    let var: Vec<f64> = (0..dim)
                        .map(|d| (sumsq[ps * dim + d] / c - mean[d] * mean[d]).max(variance_floor[d]))
                        .collect();
                    let stay = if segments[p] > 0 {
                        1.0 - segments[p] as f64 / count[ps].max(1) as f64
                    } else {
                        0.5
                    };
                    MixtureState::single(mean, var, stay.clamp(MIN_SELF_LOOP, MAX_SELF_LOOP))
                })
                .collect(),
        })
        .collect();
    let mut set = PatternSet {
        config: psi,
        dim,
        hmms,
        variance_floor: variance_floor.to_vec(),
        training_log: Vec::new(),
    };
    reseed_dead(&mut set, &frames_per_pattern);
    Ok(set)
}

/// Fraction of frames whose label differs.
pub fn label_change(old: &[Transcription], new: &[Transcription]) -> f64 {
    let mut changed = 0usize;
    let mut total = 0usize;
    for (a, b) in old.iter().zip(new) {
        let (la, lb) = (a.frame_labels(), b.frame_labels());
        total += la.len();
        changed += la.iter().zip(&lb).filter(|(x, y)| x != y).count();
    }
    if total == 0 {
        0.0
    } else {
        changed as f64 / total as f64
    }
}

pub fn decode_corpus<E: Executor>(set: &PatternSet, corpus: &[FeatureSequence], exec: &E) -> Result<Vec<Transcription>> {
    exec.map(corpus, |fs| viterbi_free_decode(set, fs)).into_iter().collect()
}

/// Alternates re-estimation and re-decoding starting from `labels`.
fn iterate<E: Executor>(
    mut set: PatternSet,
    mut labels: Vec<Transcription>,
    corpus: &[FeatureSequence],
    config: &DiscoveryConfig,
    exec: &E,
) -> Result<Discovered> {
    for iteration in 1..=config.max_iterations {
        for _ in 0..config.em_iterations {
            set = baum_welch_with(&set, corpus, &labels, exec)?.set;
        }
        let log_likelihood = fixed_label_log_likelihood(&set, corpus, &labels)?;
        let decoded = decode_corpus(&set, corpus, exec)?;
        let change = label_change(&labels, &decoded);
        set.training_log.push(IterationLog {
            iteration,
            log_likelihood,
            label_change: change,
        });
        labels = decoded;
        if change < config.convergence_threshold {
            break;
        }
    }
    Ok(Discovered { set, labels })
}

/// Discovers a pattern set at granularity `psi` (its `l` is ignored: discovery
/// always starts from one Gaussian per state; use [`grow_gaussians`] for more).
pub fn discover(corpus: &[FeatureSequence], psi: Granularity, config: &DiscoveryConfig) -> Result<Discovered> {
    discover_with(corpus, psi, config, &Sequential)
}

pub fn discover_with<E: Executor>(
    corpus: &[FeatureSequence],
    psi: Granularity,
    config: &DiscoveryConfig,
    exec: &E,
) -> Result<Discovered> {
    config.validate()?;
    let psi = psi.with_l(1);
    let labels = initialize_labels(corpus, psi, config.cell_seed(psi), config.kmeans_restarts)?;
    let floor = corpus_variance_floor(corpus)?;
    let set = flat_start(corpus, &labels, psi, &floor)?;
    iterate(set, labels, corpus, config, exec)
}

/// Splits the heaviest component of `state` into two, displaced by
/// `±SPLIT_OFFSET` standard deviations, each with half the weight.
pub fn split_heaviest(state: &mut MixtureState) {
    let dim = state.dim();
    let k = (0..state.num_components()).fold(0, |b, k| if state.weights[k] > state.weights[b] { k } else { b });
    let mean = state.mean(k).to_vec();
    let var = state.variance(k).to_vec();
    let w = state.weights[k] / 2.0;
    for d in 0..dim {
        let off = SPLIT_OFFSET * math::sqrt(var[d]);
        state.means[k * dim + d] = mean[d] - off;
    }
    state.weights[k] = w;
    state.weights.push(w);
    state.means.extend(mean.iter().zip(&var).map(|(m, v)| m + SPLIT_OFFSET * math::sqrt(*v)));
    state.variances.extend_from_slice(&var);
    renormalize(&mut state.weights);
}

/// One more Gaussian per state, then discovery iterations from the base's
/// converged labels.
pub fn grow_gaussians(base: &Discovered, corpus: &[FeatureSequence], config: &DiscoveryConfig) -> Result<Discovered> {
    grow_gaussians_with(base, corpus, config, &Sequential)
}

pub fn grow_gaussians_with<E: Executor>(
    base: &Discovered,
    corpus: &[FeatureSequence],
    config: &DiscoveryConfig,
    exec: &E,
) -> Result<Discovered> {
    config.validate()?;
    let mut set = base.set.clone();
    set.config = set.config.with_l(set.config.l + 1);
    set.training_log.clear();
    for h in &mut set.hmms {
        for st in &mut h.states {
            split_heaviest(st);
        }
    }
    iterate(set, base.labels.clone(), corpus, config, exec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    /// The set this one was grown from, if any.
    pub derived_from: Option<Granularity>,
    pub iterations: usize,
    pub label_changes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub sets: BTreeMap<Granularity, Discovered>,
    pub provenance: BTreeMap<Granularity, Provenance>,
    pub failures: BTreeMap<Granularity, Error>,
}

impl GridResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

type CellOutcome = Vec<(Granularity, Result<(Discovered, Provenance)>)>;

fn run_cell<E: Executor>(
    corpus: &[FeatureSequence],
    cell: Granularity,
    wanted: &[usize],
    config: &DiscoveryConfig,
    exec: &E,
) -> CellOutcome {
    let max_l = wanted.iter().copied().max().unwrap_or(1);
    let mut out = Vec::new();
    let provenance = |d: &Discovered, from: Option<Granularity>| Provenance {
        derived_from: from,
        iterations: d.set.training_log.len(),
        label_changes: d.set.training_log.iter().map(|l| l.label_change).collect(),
    };
    let mut current = match discover_with(corpus, cell, config, exec) {
        Ok(d) => d,
        Err(e) => {
            return wanted.iter().map(|&l| (cell.with_l(l), Err(e.clone()))).collect();
        }
    };
    if wanted.contains(&1) {
        let p = provenance(&current, None);
        out.push((cell.with_l(1), Ok((current.clone(), p))));
    }
    for l in 2..=max_l {
        let from = current.set.config;
        match grow_gaussians_with(&current, corpus, config, exec) {
            Ok(next) => current = next,
            Err(e) => {
                out.extend(wanted.iter().filter(|&&w| w >= l).map(|&w| (cell.with_l(w), Err(e.clone()))));
                return out;
            }
        }
        if wanted.contains(&l) {
            let p = provenance(&current, Some(from));
            out.push((cell.with_l(l), Ok((current.clone(), p))));
        }
    }
    out
}

/// Trains every requested granularity. Each `(m, n)` cell starts at `l = 1`
/// and grows one Gaussian at a time up to the largest requested `l`. Cells are
/// independent and run through `exec`; a failing cell does not stop the rest.
pub fn run_grid<E: Executor>(corpus: &[FeatureSequence], config: &DiscoveryConfig, exec: &E) -> Result<GridResult> {
    if config.grid.is_empty() {
        return Err(Error::InvalidParameter("empty granularity grid".into()));
    }
    config.validate()?;
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for g in &config.grid {
        Granularity::new(g.m, g.n, g.l)?;
        let ls = cells.entry((g.m, g.n)).or_default();
        if !ls.contains(&g.l) {
            ls.push(g.l);
        }
    }
    let jobs: Vec<(Granularity, Vec<usize>)> = cells
        .into_iter()
        .map(|((m, n), mut ls)| {
            ls.sort_unstable();
            (Granularity { m, n, l: 1 }, ls)
        })
        .collect();
    // cells run through `exec`; the work inside a cell stays sequential
    let outcomes = exec.map(&jobs, |(cell, ls)| run_cell(corpus, *cell, ls, config, &Sequential));
    let mut result = GridResult {
        sets: BTreeMap::new(),
        provenance: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for (psi, r) in outcomes.into_iter().flatten() {
        match r {
            Ok((d, p)) => {
                result.sets.insert(psi, d);
                result.provenance.insert(psi, p);
            }
            Err(e) => {
                result.failures.insert(psi, e);
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn clustered_corpus(n_clusters: usize, seed: u64) -> (Vec<FeatureSequence>, Vec<Vec<usize>>) {
        // each utterance: 4 segments of 6 frames (m = 2), each from one cloud
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let mut corpus = Vec::new();
        let mut truth = Vec::new();
        for u in 0..10 {
            let mut frames = Vec::new();
            let mut seg_truth = Vec::new();
            for s in 0..4 {
                let c = (u * 4 + s) % n_clusters;
                seg_truth.push(c);
                for _ in 0..6 {
                    frames.push(vec![c as f64 * 8.0 + noise.sample(&mut rng), -(c as f64) * 5.0 + noise.sample(&mut rng)]);
                }
            }
            corpus.push(FeatureSequence::from_frames(alloc::format!("u{u}"), &frames).unwrap());
            truth.push(seg_truth);
        }
        (corpus, truth)
    }

    #[test]
    fn initial_labels_match_planted_clusters() {
        let (corpus, truth) = clustered_corpus(5, 1);
        let psi = Granularity::new(2, 5, 1).unwrap();
        let labels = initialize_labels(&corpus, psi, 42, 10).unwrap();
        let mut map = [usize::MAX; 5];
        for (tr, t) in labels.iter().zip(&truth) {
            tr.validate(24, 2, 5).unwrap();
            assert_eq!(tr.tokens.len(), 4);
            for (tok, c) in tr.tokens.iter().zip(t) {
                if map[*c] == usize::MAX {
                    map[*c] = tok.pattern;
                }
                assert_eq!(map[*c], tok.pattern);
            }
        }
    }

    #[test]
    fn single_pattern_and_identical_utterances() {
        let (mut corpus, _) = clustered_corpus(3, 2);
        let mut dup = corpus[0].clone();
        dup.utterance_id = "dup".into();
        corpus.push(dup);
        let one = initialize_labels(&corpus, Granularity::new(2, 1, 1).unwrap(), 0, 3).unwrap();
        assert!(one.iter().all(|t| t.tokens.iter().all(|k| k.pattern == 0)));
        let labels = initialize_labels(&corpus, Granularity::new(2, 3, 1).unwrap(), 0, 3).unwrap();
        assert_eq!(labels[0].tokens, labels.last().unwrap().tokens);
    }

    #[test]
    fn remainder_absorbed_by_last_segment() {
        assert_eq!(uniform_segments(20, 3), vec![(0, 8), (9, 19)]);
        assert_eq!(uniform_segments(5, 3), vec![(0, 4)]);
        assert_eq!(uniform_segments(9, 3), vec![(0, 8)]);
    }

    #[test]
    fn insufficient_segments() {
        let (corpus, _) = clustered_corpus(2, 3);
        let err = initialize_labels(&corpus[..1], Granularity::new(2, 10, 1).unwrap(), 0, 1).unwrap_err();
        assert_eq!(err, Error::InsufficientData { segments: 4, n: 10 });
    }

    #[test]
    fn threshold_one_runs_single_iteration() {
        let (corpus, _) = clustered_corpus(3, 4);
        let cfg = DiscoveryConfig {
            convergence_threshold: 1.0,
            ..Default::default()
        };
        let d = discover(&corpus, Granularity::new(2, 3, 1).unwrap(), &cfg).unwrap();
        assert_eq!(d.set.training_log.len(), 1);
        d.set.validate().unwrap();
        let again = discover(&corpus, Granularity::new(2, 3, 1).unwrap(), &cfg).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn split_keeps_valid_mixture() {
        let mut st = MixtureState::single(vec![1.0, 2.0], vec![1e-8, 4.0], 0.5);
        split_heaviest(&mut st);
        split_heaviest(&mut st);
        assert_eq!(st.num_components(), 3);
        st.validate(2, None).unwrap();
        assert!((st.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(st.weights, vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let (corpus, _) = clustered_corpus(2, 5);
        assert!(run_grid(&corpus, &DiscoveryConfig::default(), &Sequential).is_err());
    }
}
