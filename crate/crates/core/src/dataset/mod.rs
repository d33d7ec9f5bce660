//! ICBHI 2017 ingestion: recording names, annotation files, class labels,
//! manifests and subject-independent splits.

mod annotation;
mod corpus;
mod filename;
mod label;
mod split;

use std::path::PathBuf;

pub use annotation::{format_annotation_file, parse_annotation_file, CycleAnnotation, PLAUSIBLE_DURATION_S};
pub use corpus::{
    build_index, corpus_statistics, format_index, parse_index, parse_manifest, read_manifest, CorpusStats, DurationStats,
    IndexFailure, IndexRecord, LabeledCycle, ManifestEntry, Partition,
};
pub use filename::{parse_filename, AcquisitionMode, ChestLocation, RecordingMeta};
pub use label::{label_from_flags, ClassLabel};
pub use split::{build_subject_independent_split, SplitRatio, SplitSpec};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("recording name {name:?}: field {field:?}: {reason}")]
    Filename {
        name: String,
        field: String,
        reason: String,
    },
    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{0}")]
    Contract(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
