//! Feature sequences and the FFT-independent parts of MFCC extraction
//! (mel filterbank, cepstral DCT, regression deltas, mean normalisation).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Per-utterance sequence of fixed-dimension feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    dim: usize,
    data: Vec<f64>,
    pub frame_shift: f64,
    pub frame_length: f64,
}

impl FeatureSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        dim: usize,
        data: Vec<f64>,
        frame_shift: f64,
        frame_length: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("feature dimension must be positive".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len() % dim,
            });
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            dim,
            data,
            frame_shift,
            frame_length,
        })
    }

    /// Builds a sequence from individual frames with a 10 ms / 25 ms framing.
    pub fn from_frames(utterance_id: impl Into<String>, frames: &[Vec<f64>]) -> Result<Self> {
        let dim = frames.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(frames.len() * dim);
        for f in frames {
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: f.len(),
                });
            }
            data.extend_from_slice(f);
        }
        Self::new(utterance_id, dim, data, 0.010, 0.025)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidParameter(alloc::format!(
                "frame range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Self::new(
            self.utterance_id.clone(),
            self.dim,
            self.data[start * self.dim..end * self.dim].to_vec(),
            self.frame_shift,
            self.frame_length,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window_secs: f64,
    pub shift_secs: f64,
    pub pre_emphasis: f64,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub delta_window: usize,
    pub low_freq: f64,
    /// `None` means the Nyquist frequency.
    pub high_freq: Option<f64>,
    pub mean_normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_secs: 0.025,
            shift_secs: 0.010,
            pre_emphasis: 0.97,
            num_filters: 26,
            num_ceps: 13,
            delta_window: 2,
            low_freq: 0.0,
            high_freq: None,
            mean_normalize: false,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        math::floor(self.window_secs * sample_rate as f64 + 0.5) as usize
    }

    pub fn shift_samples(&self, sample_rate: u32) -> usize {
        math::floor(self.shift_secs * sample_rate as f64 + 0.5) as usize
    }

    pub fn fft_size(&self, sample_rate: u32) -> usize {
        self.window_samples(sample_rate).next_power_of_two()
    }

    /// Static cepstra plus Δ and ΔΔ.
    pub fn feature_dim(&self) -> usize {
        3 * self.num_ceps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.into()));
        if !(self.window_secs > 0.0) || !(self.shift_secs > 0.0) {
            return bad("window and shift must be positive");
        }
        if self.num_filters == 0 || self.num_ceps == 0 || self.num_ceps > self.num_filters {
            return bad("need 0 < num_ceps <= num_filters");
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad("pre-emphasis must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Number of full windows that fit: `floor((samples - window) / shift) + 1`.
pub fn frame_count(num_samples: usize, window: usize, shift: usize) -> Option<usize> {
    if window == 0 || shift == 0 || num_samples < window {
        return None;
    }
    Some((num_samples - window) / shift + 1)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * math::cos(2.0 * core::f64::consts::PI * i as f64 / (len - 1) as f64))
        .collect()
}

/// Triangular mel filters over the `fft_size / 2 + 1` power-spectrum bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, fft_size: usize, sample_rate: u32, low_hz: f64, high_hz: f64) -> Self {
        let low_mel = hz_to_mel(low_hz);
        let high_mel = hz_to_mel(high_hz);
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(low_mel + (high_mel - low_mel) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let weights = (0..num_filters)
            .map(|f| {
                let (lo, mid, hi) = (edges[f], edges[f + 1], edges[f + 2]);
                (0..bins)
                    .map(|b| {
                        let hz = b as f64 * bin_hz;
                        if hz <= lo || hz >= hi {
                            0.0
                        } else if hz <= mid {
                            (hz - lo) / (mid - lo)
                        } else {
                            (hi - hz) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            centers_hz: edges[1..=num_filters].to_vec(),
            weights,
        }
    }

    pub fn num_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// DCT-II of the log filterbank energies with `sqrt(2/N)` scaling; `C0` is
/// the first output.
pub fn cepstra(log_energies: &[f64], num_ceps: usize) -> Vec<f64> {
    let n = log_energies.len() as f64;
    let scale = math::sqrt(2.0 / n);
    (0..num_ceps)
        .map(|i| {
            let s: f64 = log_energies
                .iter()
                .enumerate()
                .map(|(j, e)| e * math::cos(core::f64::consts::PI * i as f64 * (j as f64 + 0.5) / n))
                .sum();
            scale * s
        })
        .collect()
}

/// Regression deltas over `±window` frames with edge replication.
/// `frames` is row-major with `dim` columns.
pub fn deltas(frames: &[f64], dim: usize, window: usize) -> Vec<f64> {
    let t_len = frames.len() / dim;
    let mut out = vec![0.0; frames.len()];
    if t_len == 0 || window == 0 {
        return out;
    }
    let denom: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    for t in 0..t_len {
        for k in 1..=window {
            let fwd = (t + k).min(t_len - 1);
            let back = t.saturating_sub(k);
            for d in 0..dim {
                out[t * dim + d] += k as f64 * (frames[fwd * dim + d] - frames[back * dim + d]);
            }
        }
        for d in 0..dim {
            out[t * dim + d] /= denom;
        }
    }
    out
}

/// Appends Δ and ΔΔ to static features, giving `3 * dim` columns.
pub fn stack_deltas(statics: &[f64], dim: usize, window: usize) -> Vec<f64> {
    let d1 = deltas(statics, dim, window);
    let d2 = deltas(&d1, dim, window);
    let t_len = statics.len() / dim;
    let mut out = Vec::with_capacity(statics.len() * 3);
    for t in 0..t_len {
        let r = t * dim..(t + 1) * dim;
        out.extend_from_slice(&statics[r.clone()]);
        out.extend_from_slice(&d1[r.clone()]);
        out.extend_from_slice(&d2[r]);
    }
    out
}

/// Subtracts the per-dimension mean over all frames.
pub fn mean_normalize(frames: &mut [f64], dim: usize) {
    let t_len = frames.len() / dim;
    if t_len == 0 {
        return;
    }
    for d in 0..dim {
        let mean = (0..t_len).map(|t| frames[t * dim + d]).sum::<f64>() / t_len as f64;
        for t in 0..t_len {
            frames[t * dim + d] -= mean;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_one_second_16k() {
        let cfg = FeatureConfig::default();
        let w = cfg.window_samples(16_000);
        let s = cfg.shift_samples(16_000);
        assert_eq!((w, s), (400, 160));
        assert_eq!(frame_count(16_000, w, s), Some(98));
        assert_eq!(frame_count(399, w, s), None);
        assert_eq!(frame_count(400, w, s), Some(1));
    }

    #[test]
    fn delta_of_linear_ramp_is_slope() {
        let slope = 0.75;
        let frames: Vec<f64> = (0..20).map(|t| 3.0 + slope * t as f64).collect();
        let d = deltas(&frames, 1, 2);
        for t in 2..18 {
            assert!((d[t] - slope).abs() < 1e-12, "t={t} got {}", d[t]);
        }
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let frames = vec![1.25; 30];
        let stacked = stack_deltas(&frames, 3, 2);
        for t in 0..10 {
            assert_eq!(&stacked[t * 9 + 3..t * 9 + 9], &[0.0; 6]);
        }
    }

    #[test]
    fn mel_roundtrip_and_centers_increase() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        let fb = MelFilterbank::new(26, 512, 16_000, 0.0, 8_000.0);
        assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(fb.num_filters(), 26);
    }

    #[test]
    fn cepstra_of_flat_spectrum_only_c0() {
        let c = cepstra(&[2.0; 26], 13);
        assert!((c[0] - 2.0 * 26.0 * (2.0f64 / 26.0).sqrt()).abs() < 1e-9);
        for v in &c[1..] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_ragged_frames() {
        let err = FeatureSequence::from_frames("u", &[vec![0.0, 1.0], vec![2.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
