//! Baum-Welch re-estimation of each pattern on the segments currently
//! labelled with it. Segments are forced to enter at the first state and to
//! leave through the last one, so every state is left exactly once per
//! segment.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{check_dim, CompiledSet, Granularity, MixtureState, PatternHmm, PatternSet, Transcription};
use super::{MAX_SELF_LOOP, MIN_SELF_LOOP};
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::features::FeatureSequence;
use crate::math::{self, log_add, KahanSum};

/// Variance floor as a fraction of the global per-dimension variance.
pub const VARIANCE_FLOOR_FACTOR: f64 = 1e-3;

/// Mean displacement, in standard deviations, used when splitting a Gaussian.
pub(crate) const SPLIT_OFFSET: f64 = 0.2;

/// Utterances per accumulation chunk; chunks are summed in a fixed order.
const CHUNK: usize = 8;

/// `VARIANCE_FLOOR_FACTOR` times the global per-dimension variance.
pub fn corpus_variance_floor(corpus: &[FeatureSequence]) -> Result<Vec<f64>> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.dim();
    let mut count = 0usize;
    let mut sum = vec![KahanSum::default(); dim];
    let mut sumsq = vec![KahanSum::default(); dim];
    for fs in corpus {
        if fs.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: fs.dim(),
            });
        }
        for frame in fs.frames() {
            count += 1;
            for d in 0..dim {
                sum[d].add(frame[d]);
                sumsq[d].add(frame[d] * frame[d]);
            }
        }
    }
    let c = count as f64;
    Ok((0..dim)
        .map(|d| {
            let mean = sum[d].value() / c;
            let var = (sumsq[d].value() / c - mean * mean).max(0.0);
            // a constant dimension still needs a positive floor
            (VARIANCE_FLOOR_FACTOR * var).max(1e-8)
        })
        .collect())
}

#[derive(Debug, Clone)]
struct Stats {
    /// Per (pattern, state, component).
    occ: Vec<f64>,
    /// Per (pattern, state, component, dim).
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    /// Per (pattern, state).
    state_occ: Vec<f64>,
    /// Per pattern.
    segments: Vec<f64>,
    frames: Vec<usize>,
    log_likelihood: f64,
}

impl Stats {
    fn zeros(n: usize, m: usize, l: usize, dim: usize) -> Self {
        Self {
            occ: vec![0.0; n * m * l],
            sum: vec![0.0; n * m * l * dim],
            sumsq: vec![0.0; n * m * l * dim],
            state_occ: vec![0.0; n * m],
            segments: vec![0.0; n],
            frames: vec![0; n],
            log_likelihood: 0.0,
        }
    }

    fn merge(&mut self, other: &Stats) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.occ, &other.occ);
        add(&mut self.sum, &other.sum);
        add(&mut self.sumsq, &other.sumsq);
        add(&mut self.state_occ, &other.state_occ);
        add(&mut self.segments, &other.segments);
        self.frames.iter_mut().zip(&other.frames).for_each(|(x, y)| *x += y);
        self.log_likelihood += other.log_likelihood;
    }
}

/// Forward-backward over one segment forced through all `m` states.
/// Accumulates into `stats` when given; returns the segment log-likelihood.
fn segment_pass(
    c: &CompiledSet,
    pattern: usize,
    frames: &[&[f64]],
    mut stats: Option<&mut Stats>,
) -> f64 {
    let (m, l, dim) = (c.m, c.l, c.dim);
    let len = frames.len();
    let base = pattern * m;
    let mut comp = vec![0.0; len * m * l];
    let mut b = vec![0.0; len * m];
    for t in 0..len {
        for s in 0..m {
            let out = &mut comp[(t * m + s) * l..(t * m + s + 1) * l];
            b[t * m + s] = c.component_terms(base + s, frames[t], out);
        }
    }
    let ls = &c.log_self[base..base + m];
    let la = &c.log_adv[base..base + m];
    let ninf = f64::NEG_INFINITY;

    let mut alpha = vec![ninf; len * m];
    alpha[0] = b[0];
    for t in 1..len {
        for s in 0..m {
            let mut v = alpha[(t - 1) * m + s] + ls[s];
            if s > 0 {
                v = log_add(v, alpha[(t - 1) * m + s - 1] + la[s - 1]);
            }
            alpha[t * m + s] = v + b[t * m + s];
        }
    }
    let log_l = alpha[(len - 1) * m + m - 1] + la[m - 1];
    let Some(stats) = stats.as_deref_mut() else {
        return log_l;
    };
    if !log_l.is_finite() {
        return log_l;
    }

    let mut beta = vec![ninf; len * m];
    beta[(len - 1) * m + m - 1] = la[m - 1];
    for t in (0..len - 1).rev() {
        for s in 0..m {
            let mut v = ls[s] + b[(t + 1) * m + s] + beta[(t + 1) * m + s];
            if s + 1 < m {
                v = log_add(v, la[s] + b[(t + 1) * m + s + 1] + beta[(t + 1) * m + s + 1]);
            }
            beta[t * m + s] = v;
        }
    }

    for t in 0..len {
        let x = frames[t];
        for s in 0..m {
            let g = math::exp(alpha[t * m + s] + beta[t * m + s] - log_l);
            if g == 0.0 {
                continue;
            }
            let ps = base + s;
            stats.state_occ[ps] += g;
            let bt = b[t * m + s];
            for k in 0..l {
                let lc = comp[(t * m + s) * l + k];
                let r = if l == 1 { g } else { g * math::exp(lc - bt) };
                if r == 0.0 {
                    continue;
                }
                let ci = ps * l + k;
                stats.occ[ci] += r;
                let sum = &mut stats.sum[ci * dim..(ci + 1) * dim];
                for d in 0..dim {
                    sum[d] += r * x[d];
                }
                let sq = &mut stats.sumsq[ci * dim..(ci + 1) * dim];
                for d in 0..dim {
                    sq[d] += r * x[d] * x[d];
                }
            }
        }
    }
    stats.segments[pattern] += 1.0;
    stats.frames[pattern] += len;
    stats.log_likelihood += log_l;
    log_l
}

fn check_labels(set: &PatternSet, corpus: &[FeatureSequence], labels: &[Transcription]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if corpus.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} utterances but {} label sequences",
            corpus.len(),
            labels.len()
        )));
    }
    for (fs, tr) in corpus.iter().zip(labels) {
        check_dim(set, fs)?;
        if fs.utterance_id != tr.utterance_id {
            return Err(Error::InvalidParameter(format!(
                "labels for {} paired with utterance {}",
                tr.utterance_id, fs.utterance_id
            )));
        }
        tr.validate(fs.len(), set.config.m, set.config.n)?;
    }
    Ok(())
}

fn accumulate_chunk(c: &CompiledSet, chunk: &[(&FeatureSequence, &Transcription)], with_stats: bool) -> Result<Stats> {
    let mut stats = Stats::zeros(c.n, c.m, c.l, c.dim);
    let mut total = KahanSum::default();
    for (fs, tr) in chunk {
        for tok in &tr.tokens {
            let frames: Vec<&[f64]> = (tok.start..=tok.end).map(|t| fs.frame(t)).collect();
            let ll = segment_pass(c, tok.pattern, &frames, with_stats.then_some(&mut stats));
            if !ll.is_finite() {
                return Err(Error::Numerical(format!(
                    "segment {}..={} of {} has log-likelihood {ll} under pattern {}",
                    tok.start, tok.end, fs.utterance_id, tok.pattern
                )));
            }
            total.add(ll);
        }
    }
    stats.log_likelihood = total.value();
    Ok(stats)
}

fn accumulate<E: Executor>(
    set: &PatternSet,
    corpus: &[FeatureSequence],
    labels: &[Transcription],
    with_stats: bool,
    exec: &E,
) -> Result<Stats> {
    check_labels(set, corpus, labels)?;
    let c = CompiledSet::new(set);
    let pairs: Vec<(&FeatureSequence, &Transcription)> = corpus.iter().zip(labels).collect();
    let chunks: Vec<&[(&FeatureSequence, &Transcription)]> = pairs.chunks(CHUNK).collect();
    let parts = exec.map(&chunks, |ch| accumulate_chunk(&c, ch, with_stats));
    let Granularity { m, n, l } = set.config;
    let mut stats = Stats::zeros(n, m, l, set.dim);
    let mut total = KahanSum::default();
    for part in parts {
        let part = part?;
        total.add(part.log_likelihood);
        stats.merge(&part);
    }
    stats.log_likelihood = total.value();
    Ok(stats)
}

/// Corpus log-likelihood with the token labels held fixed: the sum over all
/// tokens of the forward probability of the segment under its pattern.
pub fn fixed_label_log_likelihood(set: &PatternSet, corpus: &[FeatureSequence], labels: &[Transcription]) -> Result<f64> {
    Ok(accumulate(set, corpus, labels, false, &Sequential)?.log_likelihood)
}

#[derive(Debug, Clone)]
pub struct BaumWelchOutcome {
    pub set: PatternSet,
    /// Fixed-label log-likelihood of the input parameters.
    pub log_likelihood_before: f64,
    /// Patterns with no labelled frames that were re-seeded.
    pub reseeded: Vec<usize>,
}

/// One EM re-estimation of every pattern from its labelled segments.
pub fn baum_welch(set: &PatternSet, corpus: &[FeatureSequence], labels: &[Transcription]) -> Result<PatternSet> {
    Ok(baum_welch_with(set, corpus, labels, &Sequential)?.set)
}

pub fn baum_welch_with<E: Executor>(
    set: &PatternSet,
    corpus: &[FeatureSequence],
    labels: &[Transcription],
    exec: &E,
) -> Result<BaumWelchOutcome> {
    let stats = accumulate(set, corpus, labels, true, exec)?;
    let Granularity { m, n, l } = set.config;
    let dim = set.dim;
    let floor = &set.variance_floor;
    if stats.occ.iter().chain(&stats.sum).chain(&stats.sumsq).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite sufficient statistics while training {}",
            set.config
        )));
    }

    let mut out = set.clone();
    for p in 0..n {
        if stats.frames[p] == 0 {
            continue;
        }
        for s in 0..m {
            let ps = p * m + s;
            let state = &mut out.hmms[p].states[s];
            let total: f64 = (0..l).map(|k| stats.occ[ps * l + k]).sum();
            if total <= 0.0 {
                continue;
            }
            for k in 0..l {
                let ci = ps * l + k;
                let occ = stats.occ[ci];
                state.weights[k] = occ / total;
                if occ < 1e-10 {
                    // keep the old parameters of a component that lost all mass
                    continue;
                }
                for d in 0..dim {
                    let mean = stats.sum[ci * dim + d] / occ;
                    let var = stats.sumsq[ci * dim + d] / occ - mean * mean;
                    state.means[k * dim + d] = mean;
                    state.variances[k * dim + d] = var.max(floor[d]);
                }
            }
            renormalize(&mut state.weights);
            let occ = stats.state_occ[ps];
            let sl = (occ - stats.segments[p]) / occ;
            state.self_loop = sl.clamp(MIN_SELF_LOOP, MAX_SELF_LOOP);
        }
    }
    let reseeded = reseed_dead(&mut out, &stats.frames);
    Ok(BaumWelchOutcome {
        set: out,
        log_likelihood_before: stats.log_likelihood,
        reseeded,
    })
}

pub(crate) fn renormalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
}

/// Gives every pattern without frames a copy of the busiest pattern with its
/// means shifted by `+SPLIT_OFFSET` standard deviations. The donor keeps its
/// parameters so the fixed-label likelihood is unaffected.
pub(crate) fn reseed_dead(set: &mut PatternSet, frames: &[usize]) -> Vec<usize> {
    let mut load: Vec<f64> = frames.iter().map(|f| *f as f64).collect();
    let dead: Vec<usize> = (0..frames.len()).filter(|p| frames[*p] == 0).collect();
    if dead.len() == frames.len() {
        return Vec::new();
    }
    for &p in &dead {
        let donor = (0..load.len())
            .filter(|q| frames[*q] > 0)
            .fold(None::<usize>, |best, q| match best {
                Some(b) if load[b] >= load[q] => Some(b),
                _ => Some(q),
            })
            .expect("at least one live pattern");
        load[donor] /= 2.0;
        let mut states = set.hmms[donor].states.clone();
        for st in &mut states {
            shift_means(st, SPLIT_OFFSET);
        }
        set.hmms[p] = PatternHmm { index: p, states };
    }
    dead
}

fn shift_means(st: &mut MixtureState, offset: f64) {
    for (mu, var) in st.means.iter_mut().zip(&st.variances) {
        *mu += offset * math::sqrt(*var);
    }
}
