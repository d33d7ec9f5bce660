use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;

use super::{parse_filename, ClassLabel, CycleAnnotation, DatasetError, RecordingMeta};

/// Official challenge partition a recording belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    #[default]
    Train,
    Test,
}

/// One respiration cycle with its label; `samples` is filled once the
/// recording has been decoded and sliced.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCycle {
    pub meta: RecordingMeta,
    pub annotation: CycleAnnotation,
    pub label: ClassLabel,
    pub samples: Option<Waveform>,
}

impl LabeledCycle {
    pub fn new(meta: RecordingMeta, annotation: CycleAnnotation) -> Self {
        Self {
            label: annotation.label(),
            meta,
            annotation,
            samples: None,
        }
    }

    pub fn patient(&self) -> u32 {
        self.meta.patient_id
    }
}

/// One line of a manifest: a recording and its annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub annotation: PathBuf,
    #[serde(default)]
    pub partition: Partition,
}

/// Parses a JSON-lines manifest. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: ManifestEntry = serde_json::from_str(line).map_err(|e| DatasetError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if entry.wav.is_relative() {
            entry.wav = base.join(&entry.wav);
        }
        if entry.annotation.is_relative() {
            entry.annotation = base.join(&entry.annotation);
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// One record of the cycle index written by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub wav: PathBuf,
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
    pub label: ClassLabel,
    pub patient: u32,
    #[serde(default)]
    pub partition: Partition,
}

impl IndexRecord {
    pub fn from_cycle(wav: &Path, cycle: &LabeledCycle, partition: Partition) -> Self {
        Self {
            wav: wav.to_path_buf(),
            start_s: cycle.annotation.start_s,
            end_s: cycle.annotation.end_s,
            crackle: cycle.annotation.crackle,
            wheeze: cycle.annotation.wheeze,
            label: cycle.label,
            patient: cycle.patient(),
            partition,
        }
    }

    pub fn annotation(&self) -> Result<CycleAnnotation, DatasetError> {
        CycleAnnotation::new(self.start_s, self.end_s, self.crackle, self.wheeze)
    }

    pub fn to_cycle(&self) -> Result<LabeledCycle, DatasetError> {
        let meta = parse_filename(&self.wav.to_string_lossy())?;
        let cycle = LabeledCycle::new(meta, self.annotation()?);
        if cycle.label != self.label || cycle.patient() != self.patient {
            return Err(DatasetError::Contract(format!(
                "index record for {} disagrees with its flags or file name",
                self.wav.display()
            )));
        }
        Ok(cycle)
    }
}

/// A manifest entry that could not be indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexFailure {
    pub wav: PathBuf,
    pub reason: String,
}

/// Parses every entry's file name and annotation file into index records,
/// in manifest order. Entries that fail are listed instead of aborting.
pub fn build_index(entries: &[ManifestEntry]) -> (Vec<IndexRecord>, Vec<IndexFailure>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for entry in entries {
        let parsed = parse_filename(&entry.wav.to_string_lossy()).and_then(|meta| {
            let text = fs::read_to_string(&entry.annotation).map_err(|source| DatasetError::Io {
                path: entry.annotation.clone(),
                source,
            })?;
            Ok((meta, super::parse_annotation_file(&text)?))
        });
        match parsed {
            Ok((meta, cycles)) => records.extend(cycles.into_iter().map(|a| {
                IndexRecord::from_cycle(&entry.wav, &LabeledCycle::new(meta.clone(), a), entry.partition)
            })),
            Err(e) => failures.push(IndexFailure {
                wav: entry.wav.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (records, failures)
}

pub fn format_index(records: &[IndexRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("index records always serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_index(text: &str) -> Result<Vec<IndexRecord>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Manifest {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub min_s: f64,
    pub mean_s: f64,
    pub max_s: f64,
}

/// Counts and duration summary of a set of cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub per_class: [usize; 4],
    pub patients: usize,
    /// `None` when there are no cycles.
    pub durations: Option<DurationStats>,
}

pub fn corpus_statistics<'a>(cycles: impl IntoIterator<Item = &'a LabeledCycle>) -> CorpusStats {
    let mut per_class = [0; 4];
    let mut patients = BTreeSet::new();
    let mut count = 0;
    let (mut min, mut max, mut total) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for c in cycles {
        count += 1;
        per_class[c.label.index()] += 1;
        patients.insert(c.patient());
        let d = c.annotation.duration_s();
        min = min.min(d);
        max = max.max(d);
        total += d;
    }
    CorpusStats {
        count,
        per_class,
        patients: patients.len(),
        durations: (count > 0).then(|| DurationStats {
            min_s: min,
            mean_s: total / count as f64,
            max_s: max,
        }),
    }
}
