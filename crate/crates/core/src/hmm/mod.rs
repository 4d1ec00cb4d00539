//! Left-to-right GMM-HMM acoustic patterns: emission scoring, Baum-Welch
//! re-estimation on labelled segments, and free-pattern (pattern loop)
//! Viterbi / N-best decoding.

mod decode;
pub(crate) mod train;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{self, LN_2PI};

pub use decode::{nbest_decode, nbest_decode_with, viterbi_free_decode};
pub use train::{
    baum_welch, baum_welch_with, corpus_variance_floor, fixed_label_log_likelihood, BaumWelchOutcome,
    VARIANCE_FLOOR_FACTOR,
};

/// Self-loop probabilities are kept inside this interval so that neither
/// transition of a state ever becomes impossible.
pub const MIN_SELF_LOOP: f64 = 1e-3;
pub const MAX_SELF_LOOP: f64 = 0.999;

/// Model granularity: states per pattern (`m`), number of patterns (`n`) and
/// Gaussians per state (`l`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Granularity {
    pub m: usize,
    pub n: usize,
    pub l: usize,
}

impl Granularity {
    pub fn new(m: usize, n: usize, l: usize) -> Result<Self> {
        if m == 0 || n == 0 || l == 0 || m > u16::MAX as usize || n > u32::MAX as usize / 2 {
            return Err(Error::InvalidGranularity { m, n, l });
        }
        Ok(Self { m, n, l })
    }

    pub fn with_l(self, l: usize) -> Self {
        Self { l, ..self }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}n{}l{}", self.m, self.n, self.l)
    }
}

impl FromStr for Granularity {
    type Err = Error;

    /// Parses the `m3n50l2` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(alloc::format!("bad granularity '{s}'"));
        let rest = s.strip_prefix('m').ok_or_else(bad)?;
        let (m, rest) = rest.split_once('n').ok_or_else(bad)?;
        let (n, l) = rest.split_once('l').ok_or_else(bad)?;
        let p = |x: &str| x.parse::<usize>().map_err(|_| bad());
        Self::new(p(m)?, p(n)?, p(l)?)
    }
}

/// One emitting state: a diagonal-covariance Gaussian mixture plus its
/// self-loop probability (the advance probability is `1 - self_loop`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub weights: Vec<f64>,
    /// `l * dim`, component-major.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub self_loop: f64,
}

impl MixtureState {
    pub fn single(mean: Vec<f64>, variance: Vec<f64>, self_loop: f64) -> Self {
        Self {
            weights: alloc::vec![1.0],
            means: mean,
            variances: variance,
            self_loop,
        }
    }

    #[inline]
    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.means.len() / self.weights.len().max(1)
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.means[k * d..(k + 1) * d]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.variances[k * d..(k + 1) * d]
    }

    /// Log density of `frame` under the mixture, via log-sum-exp over the
    /// components so that far-away frames stay finite.
    pub fn log_likelihood(&self, frame: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if frame.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: frame.len(),
            });
        }
        let mut terms = Vec::with_capacity(self.num_components());
        for k in 0..self.num_components() {
            if self.weights[k] <= 0.0 {
                continue;
            }
            terms.push(math::ln(self.weights[k]) + gaussian_log_density(frame, self.mean(k), self.variance(k)));
        }
        Ok(math::log_sum_exp(&terms))
    }

    pub fn validate(&self, dim: usize, floor: Option<&[f64]>) -> Result<()> {
        let l = self.num_components();
        if l == 0 || self.means.len() != l * dim || self.variances.len() != l * dim {
            return Err(Error::DimensionMismatch {
                expected: l * dim,
                actual: self.means.len(),
            });
        }
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Numerical(alloc::format!("mixture weights sum to {wsum}")));
        }
        if !(self.self_loop >= 0.0 && self.self_loop < 1.0) {
            return Err(Error::Numerical(alloc::format!("self-loop {} outside [0,1)", self.self_loop)));
        }
        for (i, v) in self.variances.iter().enumerate() {
            let lo = floor.map(|f| f[i % dim]).unwrap_or(0.0);
            if !(*v > 0.0) || *v < lo {
                return Err(Error::Numerical(alloc::format!("variance {v} below floor {lo}")));
            }
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numerical("non-finite mean".into()));
        }
        Ok(())
    }
}

pub(crate) fn gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = x.len() as f64 * LN_2PI;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        let d = xi - mi;
        acc += math::ln(*vi) + d * d / vi;
    }
    -0.5 * acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternHmm {
    pub index: usize,
    pub states: Vec<MixtureState>,
}

impl PatternHmm {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Fixed-label corpus log-likelihood after re-estimation.
    pub log_likelihood: f64,
    /// Fraction of frames whose pattern label changed after re-decoding.
    pub label_change: f64,
}

/// A trained inventory of `n` pattern HMMs sharing `m` and `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub config: Granularity,
    pub dim: usize,
    pub hmms: Vec<PatternHmm>,
    /// Per-dimension lower bound applied to every variance.
    pub variance_floor: Vec<f64>,
    pub training_log: Vec<IterationLog>,
}

impl PatternSet {
    pub fn validate(&self) -> Result<()> {
        let Granularity { m, n, l } = self.config;
        if self.hmms.len() != n {
            return Err(Error::InvalidParameter(alloc::format!(
                "{} hmms for n={n}",
                self.hmms.len()
            )));
        }
        if self.variance_floor.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: self.variance_floor.len(),
            });
        }
        for (i, h) in self.hmms.iter().enumerate() {
            if h.index != i || h.states.len() != m {
                return Err(Error::InvalidParameter(alloc::format!("pattern {i} malformed")));
            }
            for s in &h.states {
                if s.num_components() != l {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "pattern {i} has a state with {} components, expected {l}",
                        s.num_components()
                    )));
                }
                s.validate(self.dim, Some(&self.variance_floor))?;
            }
        }
        Ok(())
    }
}

/// One decoded pattern token; `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token {
    pub pattern: usize,
    pub start: usize,
    pub end: usize,
}

impl Token {
    #[inline]
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub utterance_id: String,
    pub tokens: Vec<Token>,
    pub log_likelihood: f64,
}

impl Transcription {
    pub fn num_frames(&self) -> usize {
        self.tokens.last().map(|t| t.end + 1).unwrap_or(0)
    }

    /// Pattern label of every frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_frames());
        for t in &self.tokens {
            out.extend(core::iter::repeat_n(t.pattern, t.len()));
        }
        out
    }

    pub fn patterns(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.pattern).collect()
    }

    /// Tokens tile `0..num_frames`, each spans at least `min_len` frames and
    /// uses a pattern index below `n`.
    pub fn validate(&self, num_frames: usize, min_len: usize, n: usize) -> Result<()> {
        let mut next = 0;
        for t in &self.tokens {
            if t.start != next || t.end < t.start || t.len() < min_len || t.pattern >= n {
                return Err(Error::InvalidParameter(alloc::format!(
                    "token {:?} breaks tiling of {} at frame {next}",
                    t,
                    self.utterance_id
                )));
            }
            next = t.end + 1;
        }
        if next != num_frames {
            return Err(Error::InvalidParameter(alloc::format!(
                "transcription of {} covers {next} of {num_frames} frames",
                self.utterance_id
            )));
        }
        Ok(())
    }
}

/// Up to N transcriptions ordered by descending log-likelihood; equal scores
/// are ordered by token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utterance_id: String,
    pub entries: Vec<Transcription>,
}

impl NBestList {
    pub fn best(&self) -> Option<&Transcription> {
        self.entries.first()
    }
}

/// Emission tables precomputed from a pattern set.
#[derive(Debug)]
pub(crate) struct CompiledSet {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub dim: usize,
    /// `ln w - 0.5 (F ln 2pi + sum ln var)` per (pattern, state, component).
    log_const: Vec<f64>,
    means: Vec<f64>,
    inv_var: Vec<f64>,
    pub log_self: Vec<f64>,
    pub log_adv: Vec<f64>,
}

impl CompiledSet {
    pub fn new(set: &PatternSet) -> Self {
        let Granularity { m, n, l } = set.config;
        let dim = set.dim;
        let mut log_const = Vec::with_capacity(n * m * l);
        let mut means = Vec::with_capacity(n * m * l * dim);
        let mut inv_var = Vec::with_capacity(n * m * l * dim);
        let mut log_self = Vec::with_capacity(n * m);
        let mut log_adv = Vec::with_capacity(n * m);
        for h in &set.hmms {
            for s in &h.states {
                log_self.push(math::ln(s.self_loop));
                log_adv.push(math::ln(1.0 - s.self_loop));
                for k in 0..l {
                    let var = s.variance(k);
                    let c = dim as f64 * LN_2PI + var.iter().map(|v| math::ln(*v)).sum::<f64>();
                    let w = s.weights[k];
                    log_const.push(if w > 0.0 { math::ln(w) - 0.5 * c } else { f64::NEG_INFINITY });
                    means.extend_from_slice(s.mean(k));
                    inv_var.extend(var.iter().map(|v| 1.0 / v));
                }
            }
        }
        Self {
            m,
            n,
            l,
            dim,
            log_const,
            means,
            inv_var,
            log_self,
            log_adv,
        }
    }

    /// Writes the per-component log terms of state `ps = p * m + s` into `out`
    /// and returns their log-sum-exp.
    #[inline]
    pub fn component_terms(&self, ps: usize, frame: &[f64], out: &mut [f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for k in 0..self.l {
            let c = ps * self.l + k;
            let lc = self.log_const[c];
            if lc == f64::NEG_INFINITY {
                out[k] = lc;
                continue;
            }
            let mu = &self.means[c * self.dim..(c + 1) * self.dim];
            let iv = &self.inv_var[c * self.dim..(c + 1) * self.dim];
            let mut q = 0.0;
            for d in 0..self.dim {
                let x = frame[d] - mu[d];
                q += x * x * iv[d];
            }
            out[k] = lc - 0.5 * q;
            max = max.max(out[k]);
        }
        if self.l == 1 {
            return out[0];
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let s: f64 = out[..self.l].iter().map(|v| math::exp(v - max)).sum();
        max + math::ln(s)
    }

    /// `T x (n*m)` table of state log-likelihoods.
    pub fn emissions(&self, feats: &crate::features::FeatureSequence) -> Vec<f64> {
        let nm = self.n * self.m;
        let mut out = Vec::with_capacity(feats.len() * nm);
        let mut buf = alloc::vec![0.0; self.l];
        for frame in feats.frames() {
            for ps in 0..nm {
                out.push(self.component_terms(ps, frame, &mut buf));
            }
        }
        out
    }
}

pub(crate) fn check_dim(set: &PatternSet, feats: &crate::features::FeatureSequence) -> Result<()> {
    if feats.dim() != set.dim {
        return Err(Error::DimensionMismatch {
            expected: set.dim,
            actual: feats.dim(),
        });
    }
    Ok(())
}
