use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ClassLabel, DatasetError};

/// Cycle durations outside this range (seconds) are logged as implausible.
pub const PLAUSIBLE_DURATION_S: (f64, f64) = (0.05, 30.0);

/// One annotated respiration cycle within a recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

impl CycleAnnotation {
    pub fn new(start_s: f64, end_s: f64, crackle: bool, wheeze: bool) -> Result<Self, DatasetError> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(DatasetError::Annotation {
                line: 0,
                reason: format!("invalid cycle interval [{start_s}, {end_s})"),
            });
        }
        Ok(Self {
            start_s,
            end_s,
            crackle,
            wheeze,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn label(&self) -> ClassLabel {
        ClassLabel::from_flags(self.crackle, self.wheeze)
    }

    pub fn is_plausible(&self) -> bool {
        let d = self.duration_s();
        (PLAUSIBLE_DURATION_S.0..=PLAUSIBLE_DURATION_S.1).contains(&d)
    }
}

fn parse_flag(token: &str) -> Option<bool> {
    match token {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Parses an annotation file: one cycle per non-empty line, four
/// whitespace-separated columns `start end crackle wheeze`.
pub fn parse_annotation_file(text: &str) -> Result<Vec<CycleAnnotation>, DatasetError> {
    let mut cycles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |reason: String| DatasetError::Annotation { line: line_no, reason };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 4 {
            return Err(err(format!("expected 4 columns, found {}", cols.len())));
        }
        let start: f64 = cols[0]
            .parse()
            .map_err(|_| err(format!("start {:?} is not a number", cols[0])))?;
        let end: f64 = cols[1]
            .parse()
            .map_err(|_| err(format!("end {:?} is not a number", cols[1])))?;
        let crackle = parse_flag(cols[2]).ok_or_else(|| err(format!("crackle flag {:?} not in {{0,1}}", cols[2])))?;
        let wheeze = parse_flag(cols[3]).ok_or_else(|| err(format!("wheeze flag {:?} not in {{0,1}}", cols[3])))?;
        if !start.is_finite() || !end.is_finite() || start < 0.0 {
            return Err(err(format!("invalid start {start}")));
        }
        if end <= start {
            return Err(err(format!("end {end} is not after start {start}")));
        }
        let cycle = CycleAnnotation {
            start_s: start,
            end_s: end,
            crackle,
            wheeze,
        };
        if !cycle.is_plausible() {
            log::warn!(
                "line {line_no}: implausible cycle duration {:.3} s",
                cycle.duration_s()
            );
        }
        cycles.push(cycle);
    }
    Ok(cycles)
}

/// Writes cycles in the annotation-file layout; parsing the result gives
/// back identical values.
pub fn format_annotation_file(cycles: &[CycleAnnotation]) -> String {
    let mut out = String::new();
    for c in cycles {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            c.start_s,
            c.end_s,
            u8::from(c.crackle),
            u8::from(c.wheeze)
        )
        .expect("writing to a String cannot fail");
    }
    out
}
