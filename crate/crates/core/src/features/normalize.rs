use serde::{Deserialize, Serialize};

use super::{FeatureError, Spectrogram, StatsSource};

pub const STD_FLOOR: f64 = 1e-8;

/// Dataset-wide standardization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    pub source: StatsSource,
}

impl NormStats {
    /// Mean and population standard deviation over every cell, visited in
    /// iteration order.
    pub fn compute<'a, I>(specs: I, source: StatsSource) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a Spectrogram>,
    {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
        for spec in specs {
            for &v in &spec.values {
                n += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
        if n == 0 {
            return Err(FeatureError::Contract("normalization statistics need at least one value".into()));
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        Ok(Self {
            mean,
            std: var.sqrt(),
            source,
        })
    }

    pub fn from_training<'a, I>(specs: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a Spectrogram>,
    {
        Self::compute(specs, StatsSource::TrainSplit)
    }
}

/// `(x − mean) / max(std, 1e-8)` on every cell.
pub fn normalize(spec: &Spectrogram, stats: &NormStats) -> Spectrogram {
    let std = stats.std.max(STD_FLOOR);
    Spectrogram {
        mel_bins: spec.mel_bins,
        frames: spec.frames,
        values: spec.values.iter().map(|v| (v - stats.mean) / std).collect(),
        normalized_with: Some(stats.source),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn self_stats_standardize() {
        let values: Vec<f64> = (0..16 * 40).map(|i| ((i * 37 % 101) as f64).ln_1p() - 12.0).collect();
        let spec = Spectrogram::new(16, 40, values).unwrap();
        let stats = NormStats::compute([&spec], StatsSource::SelfStats).unwrap();
        let out = normalize(&spec, &stats);
        let (mean, std) = moments(&out.values);
        assert!(mean.abs() < 1e-9, "{mean}");
        assert!((std - 1.0).abs() < 1e-6, "{std}");
        assert_eq!(out.normalized_with, Some(StatsSource::SelfStats));
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let spec = Spectrogram::new(16, 16, vec![-23.0; 256]).unwrap();
        let stats = NormStats::compute([&spec], StatsSource::SelfStats).unwrap();
        assert_eq!(stats.std, 0.0);
        assert!(normalize(&spec, &stats).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_stats_are_tagged() {
        let spec = Spectrogram::new(16, 16, (0..256).map(f64::from).collect()).unwrap();
        let stats = NormStats::from_training([&spec]).unwrap();
        assert_eq!(normalize(&spec, &stats).normalized_with, Some(StatsSource::TrainSplit));
    }

    #[test]
    fn empty_is_rejected() {
        assert!(NormStats::from_training(std::iter::empty()).is_err());
    }
}
