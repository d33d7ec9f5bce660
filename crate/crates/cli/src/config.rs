//! Run configuration: one JSON document, resolved against defaults and
//! command-line overrides, then persisted verbatim in the run directory.

use std::path::{Path, PathBuf};

use asvit_core::dataset::SplitRatio;
use asvit_core::features::FeatureConfig;
use asvit_core::model::ModelConfig;
use asvit_core::training::{CropPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines manifest of recordings and annotation files.
    pub manifest: Option<PathBuf>,
    /// Cycle index written by `prepare`; built from the manifest when null.
    pub index: Option<PathBuf>,
    /// Base for relative recording paths (default: the manifest's folder).
    pub wav_root: Option<PathBuf>,
    /// Base for relative annotation paths (default: the manifest's folder).
    pub annotation_root: Option<PathBuf>,
    /// Folder for cached fixed-start spectrograms.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub target_s: f64,
    pub eval_start_s: f64,
}

impl AudioConfig {
    pub fn crop(&self) -> CropPolicy {
        CropPolicy {
            target_s: self.target_s,
            eval_start_s: self.eval_start_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Patient-level ratio split of the official training portion; the
    /// official test portion, if any, gets a final report.
    Resplit,
    /// Official training portion against the official test portion.
    Official,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub ratio: SplitRatio,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub audio: AudioConfig,
    pub features: FeatureConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub output_dir: PathBuf,
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Sets `a.b.c = value`, creating intermediate objects.
pub fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let map = node.as_object_mut().expect("just made an object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(CliError::Config(format!("empty override key {dotted:?}")))
}

/// Parses the value of a `--set key=value` override: JSON when it parses,
/// a plain string otherwise.
pub fn parse_override(spec: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} must look like key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

fn section<'a>(user: &'a Value, key: &str) -> Option<&'a Value> {
    user.get(key).filter(|v| !v.is_null())
}

impl RunConfig {
    /// Fills every field the user left out. Model geometry follows from the
    /// audio and feature settings; the training preset follows the model
    /// preset (batch 8 for "toy", 32 otherwise).
    pub fn resolve(user: &Value) -> Result<Self, CliError> {
        if !user.is_object() {
            return Err(CliError::Config("the configuration must be a JSON object".into()));
        }
        let mut audio = json!({ "sample_rate": 4000, "target_s": 10.0, "eval_start_s": 0.0 });
        if let Some(a) = section(user, "audio") {
            merge(&mut audio, a);
        }
        let audio_cfg: AudioConfig = parse_section(&audio, "audio")?;

        let mut features = serde_json::to_value(FeatureConfig::for_rate(audio_cfg.sample_rate)).expect("serializable");
        if let Some(f) = section(user, "features") {
            merge(&mut features, f);
        }
        let features_cfg: FeatureConfig = parse_section(&features, "features")?;

        let preset = match section(user, "model").and_then(|m| m.get("preset")) {
            None | Some(Value::Null) => "toy".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => return Err(CliError::Config(format!("model.preset: expected a string, found {other}"))),
        };
        if audio_cfg.target_s <= 0.0 || !audio_cfg.target_s.is_finite() {
            return Err(CliError::Config("audio.target_s: must be a positive number of seconds".into()));
        }
        let samples = (audio_cfg.target_s * audio_cfg.sample_rate as f64).round() as usize;
        let base_model = ModelConfig::preset(&preset, features_cfg.mel_bins, features_cfg.frames(samples))
            .map_err(|e| CliError::Config(format!("model.preset: {e}")))?;
        let mut model = json!({ "preset": preset, "config": base_model });
        if let Some(m) = section(user, "model") {
            merge(&mut model, m);
        }

        let train_base = if preset == "toy" {
            TrainConfig::toy()
        } else {
            TrainConfig::full()
        };
        let mut full = json!({
            "data": { "manifest": null, "index": null, "wav_root": null, "annotation_root": null, "cache_dir": null },
            "audio": audio,
            "features": features,
            "model": model,
            "train": train_base,
            "split": { "mode": "resplit", "ratio": "80:20", "seed": 0 },
            "output_dir": "runs/latest",
        });
        for key in ["data", "train", "split", "output_dir"] {
            if let Some(v) = section(user, key) {
                merge(&mut full[key], v);
            }
        }
        if let Some(unknown) = user
            .as_object()
            .and_then(|o| o.keys().find(|k| full.get(k.as_str()).is_none()))
        {
            return Err(CliError::Config(format!("{unknown}: unknown configuration field")));
        }
        let cfg: RunConfig = parse_section(&full, "")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{field}: {e}"));
        self.features.validate().map_err(|e| bad("features", &e))?;
        if self.features.sample_rate != self.audio.sample_rate {
            return Err(CliError::Config(format!(
                "features.sample_rate: {} differs from audio.sample_rate {}",
                self.features.sample_rate, self.audio.sample_rate
            )));
        }
        self.model.config.validate().map_err(|e| bad("model.config", &e))?;
        let samples = (self.audio.target_s * self.audio.sample_rate as f64).round() as usize;
        let frames = self.features.frames(samples);
        if (self.model.config.mel_bins, self.model.config.frames) != (self.features.mel_bins, frames) {
            return Err(CliError::Config(format!(
                "model.config: input {}×{} does not match the {}×{frames} spectrograms of audio.target_s = {}",
                self.model.config.mel_bins, self.model.config.frames, self.features.mel_bins, self.audio.target_s
            )));
        }
        if self.audio.eval_start_s < 0.0 {
            return Err(CliError::Config("audio.eval_start_s: must not be negative".into()));
        }
        self.train.validate().map_err(|e| bad("train", &e))?;
        Ok(())
    }

    pub fn load_value(path: &Path) -> Result<Value, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run configs always serialize");
        s.push('\n');
        s
    }
}

fn parse_section<T: serde::de::DeserializeOwned>(value: &Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        CliError::Config(format!("{path}: {}", e.inner()))
    })
}
