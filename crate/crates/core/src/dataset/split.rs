use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Train:eval patient ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitRatio {
    #[serde(rename = "60:40")]
    SixtyForty,
    #[serde(rename = "80:20")]
    EightyTwenty,
}

impl SplitRatio {
    pub fn train_percent(self) -> usize {
        match self {
            Self::SixtyForty => 60,
            Self::EightyTwenty => 80,
        }
    }

    /// `⌈train% · n⌉`, computed in integers.
    pub fn train_count(self, n: usize) -> usize {
        (self.train_percent() * n).div_ceil(100)
    }
}

impl FromStr for SplitRatio {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s.trim() {
            "60:40" => Ok(Self::SixtyForty),
            "80:20" => Ok(Self::EightyTwenty),
            other => Err(DatasetError::Contract(format!(
                "split ratio {other:?} must be 60:40 or 80:20"
            ))),
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SixtyForty => f.write_str("60:40"),
            Self::EightyTwenty => f.write_str("80:20"),
        }
    }
}

/// Patient-level partition; no patient appears on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratio: SplitRatio,
    pub seed: u64,
    pub train_patients: BTreeSet<u32>,
    pub eval_patients: BTreeSet<u32>,
}

impl SplitSpec {
    pub fn is_train(&self, patient: u32) -> bool {
        self.train_patients.contains(&patient)
    }

    pub fn is_eval(&self, patient: u32) -> bool {
        self.eval_patients.contains(&patient)
    }
}

/// Shuffles the sorted patient ids with ChaCha8 seeded by `seed` and puts
/// the first `⌈ratio · n⌉` on the training side.
pub fn build_subject_independent_split(
    patients: &BTreeSet<u32>,
    ratio: SplitRatio,
    seed: u64,
) -> Result<SplitSpec, DatasetError> {
    if patients.is_empty() {
        return Err(DatasetError::Contract("cannot split an empty patient set".into()));
    }
    let mut order: Vec<u32> = patients.iter().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ratio.train_count(order.len());
    let train_patients: BTreeSet<u32> = order[..n_train].iter().copied().collect();
    let eval_patients: BTreeSet<u32> = order[n_train..].iter().copied().collect();
    if eval_patients.is_empty() {
        log::warn!(
            "split {ratio} of {} patient(s) leaves the evaluation side empty",
            patients.len()
        );
    }
    Ok(SplitSpec {
        ratio,
        seed,
        train_patients,
        eval_patients,
    })
}
