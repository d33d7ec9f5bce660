use std::fmt;

use serde::{Deserialize, Serialize};

/// The four respiratory-cycle classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Normal = 0,
    Crackle = 1,
    Wheeze = 2,
    Both = 3,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [Self::Normal, Self::Crackle, Self::Wheeze, Self::Both];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "Normal",
            Self::Crackle => "Crackle",
            Self::Wheeze => "Wheeze",
            Self::Both => "Both",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(name))
    }

    pub fn from_flags(crackle: bool, wheeze: bool) -> Self {
        match (crackle, wheeze) {
            (false, false) => Self::Normal,
            (true, false) => Self::Crackle,
            (false, true) => Self::Wheeze,
            (true, true) => Self::Both,
        }
    }

    /// `(crackle, wheeze)`
    pub fn flags(self) -> (bool, bool) {
        match self {
            Self::Normal => (false, false),
            Self::Crackle => (true, false),
            Self::Wheeze => (false, true),
            Self::Both => (true, true),
        }
    }

    pub fn is_abnormal(self) -> bool {
        self != Self::Normal
    }
}

/// Maps crackle/wheeze annotation flags to a class.
pub fn label_from_flags(crackle: bool, wheeze: bool) -> ClassLabel {
    ClassLabel::from_flags(crackle, wheeze)
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
