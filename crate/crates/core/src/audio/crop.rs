use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::CycleAnnotation;

use super::{AudioError, Waveform};

/// Cycles may end this far past the end of the file before a warning.
pub const END_SLACK_S: f64 = 0.05;

/// How an over-long instance is trimmed to the target duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// Window starts at a seeded uniform offset (training).
    RandomCrop,
    /// Window starts at `fixed_start_s` (evaluation).
    FixedStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixDurationPolicy {
    pub target_s: f64,
    pub mode: CropMode,
    pub fixed_start_s: f64,
    pub rng_seed: u64,
}

impl Default for FixDurationPolicy {
    fn default() -> Self {
        Self {
            target_s: 10.0,
            mode: CropMode::FixedStart,
            fixed_start_s: 0.0,
            rng_seed: 0,
        }
    }
}

impl FixDurationPolicy {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.target_s > 0.0 && self.target_s.is_finite()) {
            return Err(AudioError::Contract(format!("target_s {} must be positive", self.target_s)));
        }
        if !(self.fixed_start_s >= 0.0 && self.fixed_start_s.is_finite()) {
            return Err(AudioError::Contract(format!(
                "fixed_start_s {} must be non-negative",
                self.fixed_start_s
            )));
        }
        Ok(())
    }

    pub fn target_samples(&self, sample_rate: u32) -> usize {
        (self.target_s * sample_rate as f64).round() as usize
    }

    pub fn random(target_s: f64, rng_seed: u64) -> Self {
        Self {
            target_s,
            mode: CropMode::RandomCrop,
            fixed_start_s: 0.0,
            rng_seed,
        }
    }

    pub fn fixed(target_s: f64, fixed_start_s: f64) -> Self {
        Self {
            target_s,
            mode: CropMode::FixedStart,
            fixed_start_s,
            rng_seed: 0,
        }
    }
}

/// Mixes a global seed with stream identifiers (SplitMix64 finalizer), so a
/// per-instance seed depends only on its identifiers and never on the
/// order in which instances are processed.
pub fn derive_seed(global: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(global), |acc, &p| mix(acc ^ mix(p)))
}

/// Samples `[round(start·rate), round(end·rate))` of a recording.
///
/// A cycle ending past the file is clamped to the file end, with a warning
/// when it overshoots by more than [`END_SLACK_S`].
pub fn slice_cycle(w: &Waveform, a: &CycleAnnotation) -> Result<Waveform, AudioError> {
    let rate = w.sample_rate() as f64;
    let start = (a.start_s * rate).round() as usize;
    if start >= w.len() {
        return Err(AudioError::Slice(format!(
            "cycle starts at {:.3} s but the recording lasts {:.3} s",
            a.start_s,
            w.duration_s()
        )));
    }
    if a.end_s > w.duration_s() + END_SLACK_S {
        log::warn!(
            "cycle end {:.3} s exceeds recording length {:.3} s; clamped",
            a.end_s,
            w.duration_s()
        );
    }
    let end = ((a.end_s * rate).round() as usize).min(w.len());
    if end <= start {
        return Err(AudioError::Slice(format!(
            "cycle [{}, {}) is empty at {} Hz",
            a.start_s,
            a.end_s,
            w.sample_rate()
        )));
    }
    Waveform::new(w.samples()[start..end].to_vec(), w.sample_rate())
}

/// Offset in samples chosen by the policy for an input of `len` samples.
pub fn crop_offset(len: usize, target: usize, policy: &FixDurationPolicy, sample_rate: u32) -> usize {
    if len <= target {
        return 0;
    }
    let max_offset = len - target;
    match policy.mode {
        CropMode::RandomCrop => ChaCha8Rng::seed_from_u64(policy.rng_seed).gen_range(0..=max_offset),
        CropMode::FixedStart => ((policy.fixed_start_s * sample_rate as f64).round() as usize).min(max_offset),
    }
}

/// Pads with trailing zeros or trims to exactly `target_s · rate` samples.
///
/// A fixed start that would run past the end is moved back so the window
/// stays inside the input.
pub fn fix_duration(w: &Waveform, policy: &FixDurationPolicy) -> Result<Waveform, AudioError> {
    policy.validate()?;
    let target = policy.target_samples(w.sample_rate());
    if target == 0 {
        return Err(AudioError::Contract("target duration is shorter than one sample".into()));
    }
    let samples = w.samples();
    let out = if samples.len() <= target {
        let mut padded = Vec::with_capacity(target);
        padded.extend_from_slice(samples);
        padded.resize(target, 0.0);
        padded
    } else {
        let offset = crop_offset(samples.len(), target, policy, w.sample_rate());
        samples[offset..offset + target].to_vec()
    };
    Waveform::new(out, w.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(seconds: f64, rate: u32) -> Waveform {
        let n = (seconds * rate as f64).round() as usize;
        Waveform::new((0..n).map(|i| (i % 1000) as f32 / 1000.0).collect(), rate).unwrap()
    }

    #[test]
    fn slice_arithmetic() {
        let w = ramp(10.0, 4000);
        let a = CycleAnnotation::new(2.0, 4.5, false, false).unwrap();
        assert_eq!(slice_cycle(&w, &a).unwrap().len(), 10000);
        let whole = CycleAnnotation::new(0.0, 10.0, false, false).unwrap();
        assert_eq!(slice_cycle(&w, &whole).unwrap(), w);
        let late = CycleAnnotation::new(11.0, 12.0, false, false).unwrap();
        assert!(matches!(slice_cycle(&w, &late), Err(AudioError::Slice(_))));
    }

    #[test]
    fn slice_past_end_is_clamped() {
        let w = ramp(10.0, 4000);
        let a = CycleAnnotation::new(9.0, 10.5, false, false).unwrap();
        assert_eq!(slice_cycle(&w, &a).unwrap().len(), 4000);
    }

    #[test]
    fn short_input_is_zero_padded_at_tail() {
        let w = ramp(2.7, 4000);
        let out = fix_duration(&w, &FixDurationPolicy::fixed(10.0, 0.0)).unwrap();
        assert_eq!(out.len(), 40000);
        assert_eq!(&out.samples()[..w.len()], w.samples());
        assert!(out.samples()[w.len()..].iter().all(|&v| v == 0.0));
        assert_eq!(out.len() - w.len(), 29200);
    }

    #[test]
    fn long_input_fixed_start_takes_first_window() {
        let w = ramp(16.2, 4000);
        let out = fix_duration(&w, &FixDurationPolicy::fixed(10.0, 0.0)).unwrap();
        assert_eq!(out.samples(), &w.samples()[..40000]);
        let late = fix_duration(&w, &FixDurationPolicy::fixed(10.0, 100.0)).unwrap();
        assert_eq!(late.samples(), &w.samples()[w.len() - 40000..]);
    }

    #[test]
    fn random_crop_is_seeded() {
        let w = ramp(16.2, 4000);
        let a = fix_duration(&w, &FixDurationPolicy::random(10.0, 42)).unwrap();
        let b = fix_duration(&w, &FixDurationPolicy::random(10.0, 42)).unwrap();
        assert_eq!(a, b);
        let offset = crop_offset(w.len(), 40000, &FixDurationPolicy::random(10.0, 42), 4000);
        assert!(offset <= 24800);
        assert_eq!(a.samples(), &w.samples()[offset..offset + 40000]);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a = derive_seed(1, &[0, 5]);
        assert_eq!(a, derive_seed(1, &[0, 5]));
        assert_ne!(a, derive_seed(1, &[0, 6]));
        assert_ne!(a, derive_seed(2, &[0, 5]));
        assert_ne!(derive_seed(1, &[5, 0]), a);
    }

    #[test]
    fn invalid_policy_is_rejected() {
        let w = ramp(1.0, 4000);
        assert!(fix_duration(&w, &FixDurationPolicy::fixed(0.0, 0.0)).is_err());
        assert!(fix_duration(&w, &FixDurationPolicy::fixed(1.0, -1.0)).is_err());
    }
}
