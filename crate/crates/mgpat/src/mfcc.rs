//! MFCC front end: framing, FFT power spectrum, and the core's mel/DCT/delta
//! stages.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use mgpat_core::features::{cepstra, frame_count, hamming, mean_normalize, stack_deltas, MelFilterbank};
use mgpat_core::{FeatureConfig, FeatureSequence};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Floor applied to filterbank energies before the log.
const ENERGY_FLOOR: f64 = 1e-10;

pub fn extract_features(utterance_id: &str, wave: &Waveform, config: &FeatureConfig) -> Result<FeatureSequence> {
    config.validate()?;
    let sr = wave.sample_rate;
    let window = config.window_samples(sr);
    let shift = config.shift_samples(sr);
    let frames = frame_count(wave.samples.len(), window, shift).ok_or_else(|| {
        Error::Data(format!(
            "{utterance_id}: {} samples is shorter than one {window}-sample window",
            wave.samples.len()
        ))
    })?;
    let nfft = config.fft_size(sr);
    let high = config.high_freq.unwrap_or(sr as f64 / 2.0);
    let bank = MelFilterbank::new(config.num_filters, nfft, sr, config.low_freq, high);
    let taper = hamming(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);

    let mut statics = Vec::with_capacity(frames * config.num_ceps);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; nfft / 2 + 1];
    for f in 0..frames {
        let x = &wave.samples[f * shift..f * shift + window];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..window {
            let prev = if i == 0 { x[0] } else { x[i - 1] };
            buf[i].re = (x[i] - config.pre_emphasis * prev) * taper[i];
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let log_e: Vec<f64> = bank.apply(&power).into_iter().map(|e| e.max(ENERGY_FLOOR).ln()).collect();
        statics.extend(cepstra(&log_e, config.num_ceps));
    }
    if config.mean_normalize {
        mean_normalize(&mut statics, config.num_ceps);
    }
    let data = stack_deltas(&statics, config.num_ceps, config.delta_window);
    Ok(FeatureSequence::new(
        utterance_id,
        config.feature_dim(),
        data,
        config.shift_secs,
        config.window_secs,
    )?)
}
