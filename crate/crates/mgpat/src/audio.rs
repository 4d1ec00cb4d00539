//! WAV input.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample rates accepted for corpus audio.
pub const SUPPORTED_RATES: [u32; 5] = [8000, 16000, 22050, 44100, 48000];

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// Samples scaled to [-1, 1).
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a 16-bit PCM WAV file, keeping the first channel.
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut reader = hound::WavReader::new(std::io::BufReader::new(file))
        .map_err(|e| Error::file(path, format!("unsupported encoding ({e})")))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::file(
            path,
            format!("unsupported encoding ({}-bit {:?}; expected 16-bit PCM)", spec.bits_per_sample, spec.sample_format),
        ));
    }
    if !SUPPORTED_RATES.contains(&spec.sample_rate) {
        return Err(Error::file(path, format!("unsupported sample rate {} Hz", spec.sample_rate)));
    }
    let channels = spec.channels.max(1) as usize;
    let mut samples = Vec::with_capacity(reader.len() as usize / channels);
    for (i, s) in reader.samples::<i16>().enumerate() {
        let s = s.map_err(|e| Error::file(path, format!("unsupported encoding ({e})")))?;
        if i % channels == 0 {
            samples.push(s as f64 / 32768.0);
        }
    }
    if samples.is_empty() {
        return Err(Error::file(path, "zero-length audio"));
    }
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| Error::file(path, e);
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in &wave.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).map_err(err)?;
    }
    w.finalize().map_err(err)
}
