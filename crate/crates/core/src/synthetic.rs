//! Separable-by-construction respiratory corpus for end-to-end checks.
//!
//! Normal cycles are pink noise, Crackle adds short decaying impulse
//! bursts, Wheeze adds a sustained 400 Hz tone and Both adds the two.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{derive_seed, encode_wav, SampleFormat};
use crate::dataset::{format_annotation_file, ClassLabel, CycleAnnotation, DatasetError, ManifestEntry, Partition};

pub const WHEEZE_HZ: f64 = 400.0;
const NOISE_RMS: f64 = 0.05;
const WHEEZE_AMPLITUDE: f64 = 0.15;
const CRACKLE_AMPLITUDE: f64 = 0.8;
const GAP_S: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub per_class: usize,
    pub patients: usize,
    pub sample_rate: u32,
    pub min_cycle_s: f64,
    pub max_cycle_s: f64,
    /// First patient id; ids are consecutive.
    pub first_patient: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            per_class: 40,
            patients: 8,
            sample_rate: 4000,
            min_cycle_s: 2.6,
            max_cycle_s: 4.0,
            first_patient: 301,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.patients == 0 || self.per_class == 0 || self.per_class % self.patients != 0 {
            return Err(DatasetError::Contract(format!(
                "per_class ({}) must be a positive multiple of patients ({})",
                self.per_class, self.patients
            )));
        }
        if !(self.min_cycle_s > 0.0 && self.max_cycle_s >= self.min_cycle_s) {
            return Err(DatasetError::Contract("cycle durations must satisfy 0 < min <= max".into()));
        }
        if self.first_patient == 0 || self.sample_rate == 0 {
            return Err(DatasetError::Contract("patient ids and sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Pink noise by Kellet's economy filter on white Gaussian noise, scaled to
/// the requested RMS.
pub fn pink_noise(n: usize, rms: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let white: f64 = rng.sample(StandardNormal);
            b0 = 0.99765 * b0 + white * 0.099_046_0;
            b1 = 0.96300 * b1 + white * 0.296_516_4;
            b2 = 0.57000 * b2 + white * 1.052_691_3;
            b0 + b1 + b2 + white * 0.1848
        })
        .collect();
    let actual = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if actual > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / actual);
    }
    out
}

/// One cycle of `duration_s` seconds for `label`.
pub fn synth_cycle(label: ClassLabel, duration_s: f64, sample_rate: u32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = sample_rate as f64;
    let n = (duration_s * rate).round() as usize;
    let mut x = pink_noise(n, NOISE_RMS, &mut rng);
    let (crackle, wheeze) = label.flags();
    if crackle {
        // Roughly eight bursts per second, each a few milliseconds of
        // exponentially decaying noise.
        let bursts = ((duration_s * 8.0).round() as usize).max(3);
        let tau = 0.003 * rate;
        for _ in 0..bursts {
            let at = rng.gen_range(0..n.max(1));
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for k in 0..(6.0 * tau) as usize {
                if at + k >= n {
                    break;
                }
                let shape: f64 = rng.sample(StandardNormal);
                x[at + k] += sign * CRACKLE_AMPLITUDE * (-(k as f64) / tau).exp() * (0.5 + 0.5 * shape.abs());
            }
        }
    }
    if wheeze {
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let ramp = 0.02 * rate;
        for (i, v) in x.iter_mut().enumerate() {
            let edge = (i as f64).min((n - 1 - i) as f64);
            let envelope = (edge / ramp).min(1.0);
            *v += WHEEZE_AMPLITUDE * envelope * (std::f64::consts::TAU * WHEEZE_HZ * i as f64 / rate + phase).sin();
        }
    }
    x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

/// Files of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub manifest: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub cycles: usize,
}

/// Writes recordings (four cycles each), annotation files and a manifest
/// under `dir`. Every patient gets `per_class / patients` cycles of every
/// class. Output depends only on `spec`.
pub fn write_corpus(dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticCorpus, DatasetError> {
    spec.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let per_patient = spec.per_class / spec.patients;
    let rate = spec.sample_rate as f64;
    let mut entries = Vec::new();
    let mut manifest = String::new();
    let mut cycles = 0;
    for p in 0..spec.patients {
        let patient = spec.first_patient + p as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[patient as u64]));
        let mut labels: Vec<ClassLabel> = ClassLabel::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat(l).take(per_patient))
            .collect();
        labels.shuffle(&mut rng);
        for (r, chunk) in labels.chunks(4).enumerate() {
            let mut samples: Vec<f32> = Vec::new();
            let mut annotations = Vec::new();
            let mut t = GAP_S;
            samples.resize((GAP_S * rate).round() as usize, 0.0);
            for (c, &label) in chunk.iter().enumerate() {
                let start = (t * 1000.0).round() / 1000.0;
                let duration = rng.gen_range(spec.min_cycle_s..=spec.max_cycle_s);
                let end = ((start + duration) * 1000.0).round() / 1000.0;
                let seed = derive_seed(spec.seed, &[patient as u64, r as u64, c as u64]);
                let begin = (start * rate).round() as usize;
                let stop = (end * rate).round() as usize;
                samples.resize(begin, 0.0);
                samples.extend(synth_cycle(label, (stop - begin) as f64 / rate, spec.sample_rate, seed));
                let (crackle, wheeze) = label.flags();
                annotations.push(CycleAnnotation::new(start, end, crackle, wheeze)?);
                t = end + GAP_S;
            }
            samples.resize((t * rate).round() as usize, 0.0);
            cycles += annotations.len();

            let stem = format!("{patient}_{}b1_Tc_sc_Synth", r + 1);
            let wav = dir.join(format!("{stem}.wav"));
            let txt = dir.join(format!("{stem}.txt"));
            fs::write(&wav, encode_wav(&[&samples], spec.sample_rate, SampleFormat::Pcm16)).map_err(io(&wav))?;
            fs::write(&txt, format_annotation_file(&annotations)).map_err(io(&txt))?;
            let entry = ManifestEntry {
                wav: PathBuf::from(format!("{stem}.wav")),
                annotation: PathBuf::from(format!("{stem}.txt")),
                partition: Partition::Train,
            };
            manifest.push_str(&serde_json::to_string(&entry).expect("manifest entries always serialize"));
            manifest.push('\n');
            entries.push(ManifestEntry {
                wav,
                annotation: txt,
                partition: Partition::Train,
            });
        }
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest).map_err(io(&path))?;
    Ok(SyntheticCorpus {
        manifest: path,
        entries,
        cycles,
    })
}
