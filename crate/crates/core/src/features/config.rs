use serde::{Deserialize, Serialize};

use super::{mel_filterbank, FeatureError};

/// Log-mel front-end settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub mel_bins: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
    /// Right-pad the frame axis to `len / hop` frames, i.e. 100 frames per
    /// second at a 10 ms hop.
    pub pad_to_duration: bool,
}

impl FeatureConfig {
    /// 25 ms Hann window, 10 ms hop, 128 mel bins over `[0, rate/2]`.
    ///
    /// The FFT size is the smallest power of two at least as long as the
    /// window for which every mel filter covers an FFT bin.
    pub fn for_rate(sample_rate: u32) -> Self {
        let mut cfg = Self {
            sample_rate,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 0,
            mel_bins: 128,
            fmin_hz: 0.0,
            fmax_hz: sample_rate as f64 / 2.0,
            log_floor: 1e-10,
            pad_to_duration: true,
        };
        cfg.fft_size = cfg.window_samples().next_power_of_two();
        while mel_filterbank(&cfg).is_err() && cfg.fft_size < 1 << 16 {
            cfg.fft_size *= 2;
        }
        cfg
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fft_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Raw STFT frames for `len` samples: `1 + ⌊(len − window)/hop⌋`.
    pub fn raw_frames(&self, len: usize) -> usize {
        let window = self.window_samples();
        if len < window {
            0
        } else {
            1 + (len - window) / self.hop_samples()
        }
    }

    /// Frames after optional padding to `⌊len / hop⌋`.
    pub fn frames(&self, len: usize) -> usize {
        let raw = self.raw_frames(len);
        if self.pad_to_duration {
            raw.max(len / self.hop_samples())
        } else {
            raw
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let fail = |msg: String| Err(FeatureError::Config(msg));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if self.window_samples() == 0 || self.hop_samples() == 0 {
            return fail("window and hop must each span at least one sample".into());
        }
        if self.fft_size < self.window_samples() {
            return fail(format!(
                "fft_size {} is shorter than the {}-sample window",
                self.fft_size,
                self.window_samples()
            ));
        }
        if self.mel_bins < 16 {
            return fail(format!("mel_bins {} is below the 16-row patch height", self.mel_bins));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= self.sample_rate as f64 / 2.0) {
            return fail(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= rate/2",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if !(self.log_floor > 0.0) {
            return fail("log_floor must be positive".into());
        }
        Ok(())
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::for_rate(crate::audio::PIPELINE_SAMPLE_RATE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry_at_4k() {
        let cfg = FeatureConfig::default();
        assert_eq!(cfg.window_samples(), 100);
        assert_eq!(cfg.hop_samples(), 40);
        assert!(cfg.fft_size.is_power_of_two() && cfg.fft_size >= 100);
        assert_eq!(cfg.raw_frames(40000), 998);
        assert_eq!(cfg.frames(40000), 1000);
        cfg.validate().unwrap();
        mel_filterbank(&cfg).unwrap();
    }

    #[test]
    fn frame_formula_matches_enumeration() {
        let cfg = FeatureConfig::default();
        let (win, hop) = (cfg.window_samples(), cfg.hop_samples());
        for len in 0..2000 {
            let brute = (0..).map(|i| i * hop).take_while(|s| s + win <= len).count();
            assert_eq!(cfg.raw_frames(len), brute, "len {len}");
        }
    }
}
