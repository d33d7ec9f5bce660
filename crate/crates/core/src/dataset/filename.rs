use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChestLocation {
    Tc,
    Al,
    Ar,
    Pl,
    Pr,
    Ll,
    Lr,
}

impl ChestLocation {
    pub fn token(self) -> &'static str {
        match self {
            Self::Tc => "Tc",
            Self::Al => "Al",
            Self::Ar => "Ar",
            Self::Pl => "Pl",
            Self::Pr => "Pr",
            Self::Ll => "Ll",
            Self::Lr => "Lr",
        }
    }
}

impl FromStr for ChestLocation {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "Tc" => Self::Tc,
            "Al" => Self::Al,
            "Ar" => Self::Ar,
            "Pl" => Self::Pl,
            "Pr" => Self::Pr,
            "Ll" => Self::Ll,
            "Lr" => Self::Lr,
            _ => return Err(()),
        })
    }
}

/// Single-channel or multi-channel acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AcquisitionMode {
    #[serde(rename = "sc")]
    SingleChannel,
    #[serde(rename = "mc")]
    MultiChannel,
}

impl AcquisitionMode {
    pub fn token(self) -> &'static str {
        match self {
            Self::SingleChannel => "sc",
            Self::MultiChannel => "mc",
        }
    }
}

/// Metadata encoded in an ICBHI recording name
/// `patientID_recordingIndex_chestLocation_mode_equipment.wav`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub patient_id: u32,
    pub recording_index: String,
    pub chest_location: ChestLocation,
    pub acquisition_mode: AcquisitionMode,
    pub equipment: String,
}

impl RecordingMeta {
    pub fn file_stem(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}",
            self.patient_id,
            self.recording_index,
            self.chest_location.token(),
            self.acquisition_mode.token(),
            self.equipment
        )
    }
}

impl fmt::Display for RecordingMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.wav", self.file_stem())
    }
}

/// Parses a recording file name; any leading directories are ignored.
pub fn parse_filename(name: &str) -> Result<RecordingMeta, DatasetError> {
    let err = |field: &str, reason: &str| DatasetError::Filename {
        name: name.to_string(),
        field: field.to_string(),
        reason: reason.to_string(),
    };
    let base = Path::new(name)
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| err("name", "not a file name"))?;
    let stem = base
        .strip_suffix(".wav")
        .ok_or_else(|| err(base, "missing .wav extension"))?;
    let fields: Vec<&str> = stem.split('_').collect();
    if fields.len() != 5 {
        return Err(err(
            stem,
            &format!("expected 5 underscore-separated fields, found {}", fields.len()),
        ));
    }
    let patient_id: u32 = fields[0]
        .parse()
        .map_err(|_| err(fields[0], "patient id is not numeric"))?;
    if patient_id == 0 {
        return Err(err(fields[0], "patient id must be positive"));
    }
    if fields[1].is_empty() {
        return Err(err(fields[1], "empty recording index"));
    }
    let chest_location = fields[2]
        .parse()
        .map_err(|_| err(fields[2], "unknown chest location"))?;
    let acquisition_mode = match fields[3] {
        "sc" => AcquisitionMode::SingleChannel,
        "mc" => AcquisitionMode::MultiChannel,
        other => return Err(err(other, "acquisition mode must be sc or mc")),
    };
    if fields[4].is_empty() {
        return Err(err(fields[4], "empty equipment"));
    }
    Ok(RecordingMeta {
        patient_id,
        recording_index: fields[1].to_string(),
        chest_location,
        acquisition_mode,
        equipment: fields[4].to_string(),
    })
}
