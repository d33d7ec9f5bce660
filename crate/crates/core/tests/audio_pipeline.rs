use asvit_core::audio::{
    crop_offset, decode_wav, encode_wav, fix_duration, resample, FixDurationPolicy, SampleFormat, Waveform,
};
use asvit_core::features::{stft_magnitude, FeatureConfig};
use proptest::prelude::*;

const CORPUS_RATES: [u32; 4] = [4000, 10000, 22050, 44100];

fn tone(freq: f64, rate: u32, seconds: f64, amp: f64) -> Vec<f32> {
    let n = (rate as f64 * seconds).round() as usize;
    (0..n)
        .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

fn mean_square(samples: &[f32]) -> f64 {
    samples.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / samples.len() as f64
}

#[test]
fn int16_full_scale_and_stereo_downmix() {
    let bytes = encode_wav(&[&[32767.0 / 32768.0]], 4000, SampleFormat::Pcm16);
    let w = decode_wav(&bytes).unwrap();
    assert_eq!(w.samples()[0], (32767.0f64 / 32768.0) as f32);

    let stereo = encode_wav(&[&[0.5], &[-0.5]], 4000, SampleFormat::Float32);
    assert_eq!(decode_wav(&stereo).unwrap().samples(), &[0.0]);
}

#[test]
fn truncated_header_is_a_decode_error() {
    let bytes = encode_wav(&[&[0.1, 0.2]], 4000, SampleFormat::Pcm16);
    let err = decode_wav(&bytes[..20]).unwrap_err().to_string();
    assert!(err.contains("chunk"), "{err}");
}

#[test]
fn resampled_tone_keeps_peak_and_power() {
    let cfg = FeatureConfig::default();
    let expect_bin = (100.0 * cfg.fft_size as f64 / 4000.0).round() as usize;
    for rate in CORPUS_RATES {
        let amp = 0.5;
        let bytes = encode_wav(&[&tone(100.0, rate, 1.0, amp)], rate, SampleFormat::Pcm16);
        let w = resample(&decode_wav(&bytes).unwrap(), 4000).unwrap();
        assert_eq!(w.sample_rate(), 4000);

        let mag = stft_magnitude(&w, &cfg).unwrap();
        for f in 0..mag.cols {
            let peak = (0..mag.rows).fold(0, |b, k| if mag.get(k, f) > mag.get(b, f) { k } else { b });
            assert_eq!(peak, expect_bin, "{rate} Hz, frame {f}");
        }

        let interior = &w.samples()[400..3600];
        let db = 10.0 * (mean_square(interior) / (amp * amp / 2.0)).log10();
        assert!(db.abs() < 1.0, "{rate} Hz: power changed by {db:.3} dB");
    }
}

#[test]
fn random_crop_offsets_cover_the_range() {
    let (len, target) = (64800, 40000);
    let max = len - target;
    let (mut lo, mut hi) = (usize::MAX, 0);
    for seed in 0..10_000u64 {
        let off = crop_offset(len, target, &FixDurationPolicy::random(10.0, seed), 4000);
        assert!(off <= max);
        lo = lo.min(off);
        hi = hi.max(off);
    }
    assert!(lo as f64 <= 0.01 * max as f64, "min offset {lo}");
    assert!(hi as f64 >= 0.99 * max as f64, "max offset {hi}");
}

#[test]
fn fixed_duration_sweep() {
    let mut seconds = 0.2;
    while seconds <= 16.2 + 1e-9 {
        let samples = tone(150.0, 4000, seconds, 0.3);
        let w = Waveform::new(samples.clone(), 4000).unwrap();
        for policy in [FixDurationPolicy::fixed(10.0, 0.0), FixDurationPolicy::random(10.0, 9)] {
            let out = fix_duration(&w, &policy).unwrap();
            assert_eq!(out.len(), 40000, "{seconds} s");
            if samples.len() <= 40000 {
                assert_eq!(&out.samples()[..samples.len()], samples.as_slice());
            }
        }
        seconds += 0.1;
    }
}

proptest! {
    #[test]
    fn padding_preserves_prefix(len in 1usize..40000, target in 1.0f64..10.0) {
        let samples: Vec<f32> = (0..len).map(|i| ((i * 7919) % 2001) as f32 / 1000.0 - 1.0).collect();
        let w = Waveform::new(samples.clone(), 4000).unwrap();
        let out = fix_duration(&w, &FixDurationPolicy::fixed(target, 0.0)).unwrap();
        let n = (target * 4000.0).round() as usize;
        prop_assert_eq!(out.len(), n);
        let keep = len.min(n);
        prop_assert_eq!(&out.samples()[..keep], &samples[..keep]);
    }
}
