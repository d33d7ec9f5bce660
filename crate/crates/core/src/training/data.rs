use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{derive_seed, fix_duration, load_wav, slice_cycle, FixDurationPolicy, Waveform};
use crate::dataset::{ClassLabel, IndexRecord, Partition};
use crate::features::cache::{config_hash, read_record, write_record};
use crate::features::{normalize, FeatureConfig, Featurizer, NormStats, Spectrogram};
use crate::model::{patch_matrix, ModelConfig};
use crate::tensor::Tensor;

use super::TrainError;

/// Seed stream identifiers mixed into [`derive_seed`].
pub const STREAM_ORDER: u64 = 1;
pub const STREAM_CROP: u64 = 2;

/// One respiration cycle ready for featurization.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Stable identifier (position in the cycle index).
    pub id: u64,
    pub patient: u32,
    pub label: ClassLabel,
    pub partition: Partition,
    /// `wav@start-end`, the cache key of the cycle.
    pub source: String,
    pub waveform: Waveform,
}

/// An index record that could not be turned into an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRecord {
    pub id: u64,
    pub wav: PathBuf,
    pub reason: String,
}

/// Decodes each referenced recording once, resamples it to `sample_rate`
/// and slices every indexed cycle. Unreadable files and bad slices are
/// reported instead of aborting.
pub fn load_instances(records: &[IndexRecord], sample_rate: u32) -> (Vec<Instance>, Vec<SkippedRecord>) {
    let mut by_file: BTreeMap<&PathBuf, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_file.entry(&r.wav).or_default().push(i);
    }
    let mut loaded: Vec<Option<Instance>> = vec![None; records.len()];
    let mut skipped = Vec::new();
    for (wav, ids) in by_file {
        let recording = match load_wav(wav, sample_rate) {
            Ok(w) => w,
            Err(e) => {
                for &i in &ids {
                    skipped.push(SkippedRecord {
                        id: i as u64,
                        wav: wav.clone(),
                        reason: e.to_string(),
                    });
                }
                continue;
            }
        };
        for i in ids {
            let r = &records[i];
            let sliced = r
                .annotation()
                .map_err(|e| e.to_string())
                .and_then(|a| slice_cycle(&recording, &a).map_err(|e| e.to_string()));
            match sliced {
                Ok(waveform) => {
                    loaded[i] = Some(Instance {
                        id: i as u64,
                        patient: r.patient,
                        label: r.label,
                        partition: r.partition,
                        source: format!("{}@{}-{}", r.wav.display(), r.start_s, r.end_s),
                        waveform,
                    })
                }
                Err(reason) => skipped.push(SkippedRecord {
                    id: i as u64,
                    wav: wav.clone(),
                    reason,
                }),
            }
        }
    }
    skipped.sort_by_key(|s| s.id);
    (loaded.into_iter().flatten().collect(), skipped)
}

/// Cropping policy for training and evaluation instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropPolicy {
    pub target_s: f64,
    pub eval_start_s: f64,
}

impl Default for CropPolicy {
    fn default() -> Self {
        Self {
            target_s: 10.0,
            eval_start_s: 0.0,
        }
    }
}

/// Waveform → normalized spectrogram → patch matrix.
pub struct Pipeline {
    featurizer: Featurizer,
    crop: CropPolicy,
    model: ModelConfig,
    stats: Option<NormStats>,
    cache: Option<PathBuf>,
}

impl Pipeline {
    pub fn new(features: FeatureConfig, crop: CropPolicy, model: ModelConfig) -> Result<Self, TrainError> {
        let featurizer = Featurizer::new(features)?;
        let pipeline = Self {
            featurizer,
            crop,
            model,
            stats: None,
            cache: None,
        };
        let (mel, frames) = pipeline.spectrogram_dims();
        if (mel, frames) != (pipeline.model.mel_bins, pipeline.model.frames) {
            return Err(TrainError::Config(format!(
                "features produce {mel}×{frames} spectrograms but the model expects {}×{}",
                pipeline.model.mel_bins, pipeline.model.frames
            )));
        }
        Ok(pipeline)
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = Some(stats);
        self
    }

    /// Fixed-start spectrograms are read from and written to `dir`.
    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache = Some(dir.into());
        self
    }

    pub fn cache_dir(&self) -> Option<&Path> {
        self.cache.as_deref()
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn crop(&self) -> &CropPolicy {
        &self.crop
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        self.featurizer.config()
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    /// Spectrogram size for a `target_s` instance.
    pub fn spectrogram_dims(&self) -> (usize, usize) {
        let cfg = self.featurizer.config();
        let samples = (self.crop.target_s * cfg.sample_rate as f64).round() as usize;
        (cfg.mel_bins, cfg.frames(samples))
    }

    fn check_rate(&self, w: &Waveform) -> Result<(), TrainError> {
        let rate = self.featurizer.config().sample_rate;
        if w.sample_rate() != rate {
            return Err(TrainError::Contract(format!(
                "instance at {} Hz, pipeline runs at {rate} Hz",
                w.sample_rate()
            )));
        }
        Ok(())
    }

    /// Fixed-start crop, unnormalized log-mel.
    pub fn eval_spectrogram(&self, inst: &Instance) -> Result<Spectrogram, TrainError> {
        self.check_rate(&inst.waveform)?;
        let cached = match &self.cache {
            Some(dir) => {
                let hash = config_hash(&(self.featurizer.config(), &self.crop, &inst.source));
                let path = dir.join(format!("{}.asvf", hex::encode(&hash[..12])));
                Some((path, hash))
            }
            None => None,
        };
        if let Some((path, hash)) = &cached {
            if let Some(spec) = read_record(path, hash)? {
                return Ok(spec);
            }
        }
        let policy = FixDurationPolicy::fixed(self.crop.target_s, self.crop.eval_start_s);
        let mut spec = self.featurizer.spectrogram(&fix_duration(&inst.waveform, &policy)?)?;
        if let Some((path, hash)) = &cached {
            write_record(path, &spec, hash)?;
            // Records hold f32; a cold run must see what a warm run reads.
            spec.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Ok(spec)
    }

    /// Random crop seeded by (global seed, epoch, instance id).
    pub fn train_spectrogram(&self, inst: &Instance, global_seed: u64, epoch: usize) -> Result<Spectrogram, TrainError> {
        self.check_rate(&inst.waveform)?;
        let seed = derive_seed(global_seed, &[STREAM_CROP, epoch as u64, inst.id]);
        let policy = FixDurationPolicy::random(self.crop.target_s, seed);
        Ok(self.featurizer.spectrogram(&fix_duration(&inst.waveform, &policy)?)?)
    }

    /// True when random cropping cannot change this instance, so its
    /// training features are the same every epoch.
    pub fn crop_is_fixed(&self, inst: &Instance) -> bool {
        let target = (self.crop.target_s * inst.waveform.sample_rate() as f64).round() as usize;
        inst.waveform.len() <= target
    }

    pub fn patches(&self, spec: &Spectrogram) -> Result<Tensor, TrainError> {
        let stats = self
            .stats
            .as_ref()
            .ok_or_else(|| TrainError::Contract("normalization statistics have not been computed".into()))?;
        Ok(patch_matrix(&normalize(spec, stats), &self.model)?)
    }

    pub fn eval_patches(&self, inst: &Instance) -> Result<Tensor, TrainError> {
        self.patches(&self.eval_spectrogram(inst)?)
    }

    pub fn train_patches(&self, inst: &Instance, global_seed: u64, epoch: usize) -> Result<Tensor, TrainError> {
        self.patches(&self.train_spectrogram(inst, global_seed, epoch)?)
    }

    /// Normalization statistics over fixed-start features of the training
    /// instances, in the given order.
    pub fn fit_stats<'a>(&self, train: impl IntoIterator<Item = &'a Instance>) -> Result<NormStats, TrainError> {
        let specs = train
            .into_iter()
            .map(|inst| self.eval_spectrogram(inst))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NormStats::from_training(&specs)?)
    }
}
