//! Pattern-to-pattern similarity: the identity ("hard") matrix, or the
//! exponentiated negative KL divergence between pattern HMMs ("soft").
//!
//! The HMM divergence is the sum over positionally aligned states of the
//! variational approximation to the KL divergence between Gaussian mixtures,
//! which is exact for single Gaussians.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hmm::{Granularity, MixtureState, PatternHmm, PatternSet};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SimilarityMode {
    Hard,
    Soft,
}

/// Closed-form KL(f || g) between diagonal Gaussians.
pub fn gaussian_kl(mean_f: &[f64], var_f: &[f64], mean_g: &[f64], var_g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..mean_f.len() {
        let diff = mean_f[d] - mean_g[d];
        acc += math::ln(var_g[d] / var_f[d]) + (var_f[d] + diff * diff) / var_g[d] - 1.0;
    }
    0.5 * acc
}

/// KL divergence between two emitting states.
///
/// One component each: the closed form. Otherwise the variational
/// approximation
/// `sum_a w_a ln( sum_a' w_a' e^{-KL(f_a||f_a')} / sum_b v_b e^{-KL(f_a||g_b)} )`,
/// clamped at zero because the approximation can dip slightly negative.
pub fn state_kl(f: &MixtureState, g: &MixtureState) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            actual: g.dim(),
        });
    }
    if f.num_components() == 1 && g.num_components() == 1 {
        return Ok(gaussian_kl(f.mean(0), f.variance(0), g.mean(0), g.variance(0)).max(0.0));
    }
    let mut total = 0.0;
    for a in 0..f.num_components() {
        let wa = f.weights[a];
        if wa <= 0.0 {
            continue;
        }
        let self_terms: Vec<f64> = (0..f.num_components())
            .filter(|&a2| f.weights[a2] > 0.0)
            .map(|a2| math::ln(f.weights[a2]) - gaussian_kl(f.mean(a), f.variance(a), f.mean(a2), f.variance(a2)))
            .collect();
        let cross_terms: Vec<f64> = (0..g.num_components())
            .filter(|&b| g.weights[b] > 0.0)
            .map(|b| math::ln(g.weights[b]) - gaussian_kl(f.mean(a), f.variance(a), g.mean(b), g.variance(b)))
            .collect();
        total += wa * (math::log_sum_exp(&self_terms) - math::log_sum_exp(&cross_terms));
    }
    Ok(total.max(0.0))
}

/// Sum of state divergences over aligned state indices.
pub fn hmm_kl(a: &PatternHmm, b: &PatternHmm) -> Result<f64> {
    if a.num_states() != b.num_states() {
        return Err(Error::InvalidParameter(alloc::format!(
            "cannot compare a {}-state pattern with a {}-state pattern",
            a.num_states(),
            b.num_states()
        )));
    }
    a.states.iter().zip(&b.states).map(|(x, y)| state_kl(x, y)).sum()
}

/// Default scaling `beta = 100 m`.
pub fn default_beta(psi: Granularity) -> f64 {
    100.0 * psi.m as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub psi: Granularity,
    pub mode: SimilarityMode,
    /// Only meaningful for soft matrices.
    pub beta: f64,
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn identity(psi: Granularity) -> Self {
        let n = psi.n;
        let mut values = vec![0.0; n * n];
        (0..n).for_each(|i| values[i * n + i] = 1.0);
        Self {
            psi,
            mode: SimilarityMode::Hard,
            beta: 0.0,
            n,
            values,
        }
    }

    /// Wraps raw row-major values, checking range and unit diagonal.
    pub fn from_values(psi: Granularity, mode: SimilarityMode, beta: f64, values: Vec<f64>) -> Result<Self> {
        let n = psi.n;
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) || (0..n).any(|i| values[i * n + i] != 1.0) {
            return Err(Error::InvalidParameter("similarity values must lie in [0,1] with unit diagonal".into()));
        }
        Ok(Self {
            psi,
            mode,
            beta,
            n,
            values,
        })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Symmetrised divergences `(KL(i,j) + KL(j,i)) / 2` for every pattern pair.
pub fn symmetric_kl_matrix(set: &PatternSet) -> Result<Vec<f64>> {
    let n = set.hmms.len();
    let mut kl = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kl[i * n + j] = hmm_kl(&set.hmms[i], &set.hmms[j])?;
            }
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (kl[i * n + j] + kl[j * n + i]);
        }
    }
    Ok(sym)
}

/// Soft matrices from precomputed symmetric divergences, for several betas.
pub fn soft_from_kl(psi: Granularity, sym_kl: &[f64], beta: f64) -> Result<SimilarityMatrix> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("beta must be positive, got {beta}")));
    }
    let n = psi.n;
    let mut values: Vec<f64> = sym_kl.iter().map(|k| math::exp(-k / beta).clamp(0.0, 1.0)).collect();
    (0..n).for_each(|i| values[i * n + i] = 1.0);
    SimilarityMatrix::from_values(psi, SimilarityMode::Soft, beta, values)
}

/// Hard mode ignores `beta`; soft mode uses `beta` or the `100 m` default.
pub fn build_similarity(set: &PatternSet, mode: SimilarityMode, beta: Option<f64>) -> Result<SimilarityMatrix> {
    match mode {
        SimilarityMode::Hard => Ok(SimilarityMatrix::identity(set.config)),
        SimilarityMode::Soft => {
            let beta = beta.unwrap_or_else(|| default_beta(set.config));
            if !(beta > 0.0) {
                return Err(Error::InvalidParameter(alloc::format!("beta must be positive, got {beta}")));
            }
            soft_from_kl(set.config, &symmetric_kl_matrix(set)?, beta)
        }
    }
}
