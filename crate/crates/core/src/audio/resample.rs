//! Rational-ratio polyphase resampling with a Blackman-windowed sinc.

use super::{AudioError, Waveform};

/// Zero crossings of the sinc kept on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 16.0;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
/// Largest phase count for which the filter table is precomputed.
const MAX_TABLE_PHASES: usize = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

struct Kernel {
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    half_width: f64,
    /// Taps on each side of the output position.
    reach: usize,
}

impl Kernel {
    fn new(source_hz: u32, target_hz: u32) -> Self {
        let ratio = (target_hz as f64 / source_hz as f64).min(1.0);
        let cutoff = 0.5 * ratio * ROLLOFF;
        let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
        Self {
            cutoff,
            half_width,
            reach: half_width.ceil() as usize,
        }
    }

    fn weight(&self, t: f64) -> f64 {
        if t.abs() >= self.half_width {
            return 0.0;
        }
        let u = std::f64::consts::PI * t / self.half_width;
        let window = 0.42 + 0.5 * u.cos() + 0.08 * (2.0 * u).cos();
        2.0 * self.cutoff * sinc(2.0 * self.cutoff * t) * window
    }

    /// Taps for fractional offset `frac ∈ [0, 1)`, normalized to unit DC gain.
    /// Tap `j` multiplies input sample `base + j + 1 − reach`.
    fn taps(&self, frac: f64) -> Vec<f64> {
        let n = 2 * self.reach;
        let mut taps: Vec<f64> = (0..n)
            .map(|j| self.weight(j as f64 + 1.0 - self.reach as f64 - frac))
            .collect();
        let total: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= total;
        }
        taps
    }
}

/// Band-limited resampling to `target_hz`.
///
/// The output has `round(len · target / source)` samples; matching rates
/// return the input unchanged.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::Contract("target sample rate must be positive".into()));
    }
    let source_hz = w.sample_rate();
    if source_hz == target_hz {
        return Ok(w.clone());
    }
    let g = gcd(source_hz as u64, target_hz as u64);
    let up = target_hz as u64 / g;
    let down = source_hz as u64 / g;
    let len = w.len() as u64;
    let out_len = ((len * up + down / 2) / down).max(1) as usize;

    let kernel = Kernel::new(source_hz, target_hz);
    let table: Option<Vec<Vec<f64>>> = (up as usize <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect());

    let input = w.samples();
    let reach = kernel.reach as i64;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = (pos % up) as usize;
        let computed;
        let taps = match &table {
            Some(t) => &t[phase],
            None => {
                computed = kernel.taps(phase as f64 / up as f64);
                &computed
            }
        };
        let first = base + 1 - reach;
        let lo = (-first).max(0) as usize;
        let hi = taps.len().min((input.len() as i64 - first).max(0) as usize);
        let mut acc = 0.0;
        for j in lo..hi {
            acc += taps[j] * input[(first + j as i64) as usize] as f64;
        }
        out.push((acc as f32).clamp(-1.0, 1.0));
    }
    Waveform::new(out, target_hz)
}
