//! Waveform decoding, resampling, cycle slicing and fixed-duration cropping.

mod crop;
mod resample;
mod wav;

use std::path::Path;

pub use crop::{crop_offset, derive_seed, fix_duration, slice_cycle, CropMode, FixDurationPolicy, END_SLACK_S};
pub use resample::resample;
pub use wav::{decode_wav, encode_wav, SampleFormat};

/// Default pipeline sample rate in Hz.
pub const PIPELINE_SAMPLE_RATE: u32 = 4000;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("wav decode error in {chunk:?} chunk: {reason}")]
    Decode { chunk: String, reason: String },
    #[error("slice error: {0}")]
    Slice(String),
    #[error("{0}")]
    Contract(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Mono audio with samples in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Contract("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::Contract("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(AudioError::Contract("samples must be finite and within [-1, 1]".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads and decodes a WAV file, then resamples it to `target_hz`.
pub fn load_wav(path: &Path, target_hz: u32) -> Result<Waveform, AudioError> {
    let bytes = std::fs::read(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    resample(&decode_wav(&bytes)?, target_hz)
}
