use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;

use super::{FeatureConfig, FeatureError};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Row-major `rows × cols` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Where the statistics used to standardize a spectrogram came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    TrainSplit,
    /// Statistics of the very input being normalized (tests, diagnostics).
    SelfStats,
}

/// Log-mel matrix `[mel_bins × frames]`, mel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mel_bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
    /// Set once the spectrogram has been standardized.
    pub normalized_with: Option<StatsSource>,
}

impl Spectrogram {
    pub fn new(mel_bins: usize, frames: usize, values: Vec<f64>) -> Result<Self, FeatureError> {
        if values.len() != mel_bins * frames {
            return Err(FeatureError::Contract(format!(
                "{} values for a {mel_bins}×{frames} spectrogram",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::Contract("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            mel_bins,
            frames,
            values,
            normalized_with: None,
        })
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.frames + frame]
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Triangular filters centred at points uniform on the mel scale,
/// `[mel_bins × fft_bins]`, each with unit peak.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<Matrix, FeatureError> {
    cfg.validate()?;
    let bins = cfg.fft_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let edges: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut fb = Matrix::zeros(cfg.mel_bins, bins);
    for m in 0..cfg.mel_bins {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..bins {
            let f = bin_hz(k);
            let w = ((f - left) / (centre - left)).min((right - f) / (right - centre)).max(0.0);
            if w > 0.0 {
                fb.data[m * bins + k] = w;
                any = true;
            }
        }
        if !any {
            return Err(FeatureError::Config(format!(
                "mel filter {m} ({left:.1}–{right:.1} Hz) covers no FFT bin; \
                 {} mel bins need a finer spectrum than fft_size {}",
                cfg.mel_bins, cfg.fft_size
            )));
        }
    }
    Ok(fb)
}

/// Short-time Fourier magnitudes, `[fft_bins × frames]`.
pub fn stft_magnitude(w: &Waveform, cfg: &FeatureConfig) -> Result<Matrix, FeatureError> {
    Featurizer::new(cfg.clone())?.stft_magnitude(w)
}

/// `ln(filterbank · mag² + floor)`, without padding or normalization.
pub fn log_mel(stft: &Matrix, filterbank: &Matrix, cfg: &FeatureConfig) -> Result<Spectrogram, FeatureError> {
    if filterbank.cols != stft.rows {
        return Err(FeatureError::Contract(format!(
            "filterbank has {} columns but the STFT has {} bins",
            filterbank.cols, stft.rows
        )));
    }
    let frames = stft.cols;
    let power: Vec<f64> = stft.data.iter().map(|m| m * m).collect();
    let mut values = vec![0.0; filterbank.rows * frames];
    for m in 0..filterbank.rows {
        let out = &mut values[m * frames..(m + 1) * frames];
        for (k, &weight) in filterbank.row(m).iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&power[k * frames..(k + 1) * frames]) {
                *o += weight * p;
            }
        }
        for o in out.iter_mut() {
            *o = (*o + cfg.log_floor).ln();
        }
    }
    Spectrogram::new(filterbank.rows, frames, values)
}

/// Appends frames filled with `value` up to `frames` in total.
pub fn pad_frames(spec: &Spectrogram, frames: usize, value: f64) -> Spectrogram {
    if frames <= spec.frames {
        return spec.clone();
    }
    let mut values = Vec::with_capacity(spec.mel_bins * frames);
    for m in 0..spec.mel_bins {
        values.extend_from_slice(&spec.values[m * spec.frames..(m + 1) * spec.frames]);
        values.extend(std::iter::repeat(value).take(frames - spec.frames));
    }
    Spectrogram {
        mel_bins: spec.mel_bins,
        frames,
        values,
        normalized_with: spec.normalized_with,
    }
}

/// Reusable log-mel front end holding the FFT plan and filterbank.
pub struct Featurizer {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Matrix,
}

impl Featurizer {
    pub fn new(cfg: FeatureConfig) -> Result<Self, FeatureError> {
        let filterbank = mel_filterbank(&cfg)?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let window = hann_window(cfg.window_samples());
        Ok(Self {
            cfg,
            fft,
            window,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    pub fn stft_magnitude(&self, w: &Waveform) -> Result<Matrix, FeatureError> {
        if w.sample_rate() != self.cfg.sample_rate {
            return Err(FeatureError::Contract(format!(
                "waveform at {} Hz, features expect {} Hz",
                w.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        let frames = self.cfg.raw_frames(w.len());
        if frames == 0 {
            return Err(FeatureError::Contract(format!(
                "{} samples is shorter than one {}-sample window",
                w.len(),
                self.cfg.window_samples()
            )));
        }
        let (hop, n) = (self.cfg.hop_samples(), self.cfg.fft_size);
        let bins = self.cfg.fft_bins();
        let samples = w.samples();
        let mut out = Matrix::zeros(bins, frames);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for f in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = f * hop;
            for (i, (c, win)) in buf.iter_mut().zip(&self.window).enumerate() {
                c.re = samples[start + i] as f64 * win;
            }
            self.fft.process(&mut buf);
            for (k, c) in buf[..bins].iter().enumerate() {
                out.data[k * frames + f] = c.norm();
            }
        }
        Ok(out)
    }

    /// Log-mel spectrogram, right-padded with the log floor when
    /// `pad_to_duration` is set.
    pub fn spectrogram(&self, w: &Waveform) -> Result<Spectrogram, FeatureError> {
        let stft = self.stft_magnitude(w)?;
        let spec = log_mel(&stft, &self.filterbank, &self.cfg)?;
        Ok(pad_frames(&spec, self.cfg.frames(w.len()), self.cfg.log_floor.ln()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, seconds: f64) -> Waveform {
        let n = (4000.0 * seconds) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 4000.0).sin()) as f32)
                .collect(),
            4000,
        )
        .unwrap()
    }

    #[test]
    fn mel_scale_values() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filters_are_nonnegative_and_unimodal() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        for m in 0..fb.rows {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            let peak = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            assert!(row[..=peak].windows(2).all(|p| p[0] <= p[1]), "filter {m} rises");
            assert!(row[peak..].windows(2).all(|p| p[0] >= p[1]), "filter {m} falls");
        }
    }

    #[test]
    fn every_interior_bin_has_weight() {
        let cfg = FeatureConfig::default();
        let fb = mel_filterbank(&cfg).unwrap();
        for k in 0..fb.cols {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
            if f > cfg.fmin_hz && f < cfg.fmax_hz {
                let total: f64 = (0..fb.rows).map(|m| fb.get(m, k)).sum();
                assert!(total > 0.0, "bin {k} at {f} Hz");
            }
        }
    }

    #[test]
    fn too_many_mel_bins_for_fft_is_a_config_error() {
        let cfg = FeatureConfig {
            fft_size: 128,
            ..FeatureConfig::default()
        };
        assert!(matches!(mel_filterbank(&cfg), Err(FeatureError::Config(_))));
    }

    #[test]
    fn tone_peaks_at_nearest_bin() {
        let cfg = FeatureConfig::default();
        let mag = stft_magnitude(&tone(200.0, 0.5, 1.0), &cfg).unwrap();
        let expect = (200.0 * cfg.fft_size as f64 / 4000.0).round() as usize;
        for f in 0..mag.cols {
            let peak = (0..mag.rows).fold(0, |b, k| if mag.get(k, f) > mag.get(b, f) { k } else { b });
            assert_eq!(peak, expect, "frame {f}");
        }
    }

    #[test]
    fn silence_gives_zero_magnitudes_and_floor() {
        let cfg = FeatureConfig::default();
        let w = Waveform::new(vec![0.0; 4000], 4000).unwrap();
        let mag = stft_magnitude(&w, &cfg).unwrap();
        assert!(mag.data.iter().all(|&v| v == 0.0));
        let fb = mel_filterbank(&cfg).unwrap();
        let spec = log_mel(&mag, &fb, &cfg).unwrap();
        assert!(spec.values.iter().all(|&v| v == cfg.log_floor.ln()));
    }

    #[test]
    fn ten_seconds_gives_998_raw_and_1000_padded_frames() {
        let cfg = FeatureConfig::default();
        let feat = Featurizer::new(cfg.clone()).unwrap();
        let w = tone(300.0, 0.1, 10.0);
        assert_eq!(feat.stft_magnitude(&w).unwrap().cols, 998);
        let spec = feat.spectrogram(&w).unwrap();
        assert_eq!((spec.mel_bins, spec.frames), (128, 1000));
        assert_eq!(spec.get(5, 999), cfg.log_floor.ln());
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let feat = Featurizer::new(FeatureConfig::default()).unwrap();
        let a = feat.spectrogram(&tone(200.0, 0.2, 1.0)).unwrap();
        let b = feat.spectrogram(&tone(200.0, 0.4, 1.0)).unwrap();
        let peak_row = (0..a.mel_bins).fold(0, |best, m| if a.get(m, 3) > a.get(best, 3) { m } else { best });
        let d = b.get(peak_row, 3) - a.get(peak_row, 3);
        assert!((d - 4f64.ln()).abs() < 1e-9, "{d}");
    }

    #[test]
    fn tone_lands_in_the_mel_row_covering_its_bin() {
        let feat = Featurizer::new(FeatureConfig::default()).unwrap();
        let cfg = feat.config();
        let bin = (200.0 * cfg.fft_size as f64 / 4000.0).round() as usize;
        let fb = feat.filterbank();
        let expect = (0..fb.rows).fold(0, |b, m| if fb.get(m, bin) > fb.get(b, bin) { m } else { b });
        let spec = feat.spectrogram(&tone(200.0, 0.5, 1.0)).unwrap();
        for f in 0..cfg.raw_frames(4000) {
            let row = (0..spec.mel_bins).fold(0, |b, m| if spec.get(m, f) > spec.get(b, f) { m } else { b });
            assert_eq!(row, expect, "frame {f}");
        }
    }

    #[test]
    fn short_waveform_is_rejected() {
        let w = Waveform::new(vec![0.0; 50], 4000).unwrap();
        assert!(stft_magnitude(&w, &FeatureConfig::default()).is_err());
    }
}
