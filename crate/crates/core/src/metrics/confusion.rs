use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;

use super::MetricsError;

/// 4×4 count matrix; rows are the true class, columns the prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        Self { counts }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (ClassLabel, ClassLabel)>) -> Self {
        let mut cm = Self::new();
        for &(truth, pred) in pairs {
            cm.record(truth, pred);
        }
        cm
    }

    pub fn record(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn counts(&self) -> &[[u64; 4]; 4] {
        &self.counts
    }

    pub fn get(&self, truth: ClassLabel, predicted: ClassLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, truth: ClassLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn column_total(&self, predicted: ClassLabel) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn correct(&self, class: ClassLabel) -> u64 {
        self.counts[class.index()][class.index()]
    }

    /// Entrywise sum, so evaluation shards combine in any order.
    pub fn merge(&self, other: &Self) -> Self {
        let mut out = *self;
        for (r, row) in out.counts.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += other.counts[r][c];
            }
        }
        out
    }
}

fn abnormal() -> [ClassLabel; 3] {
    [ClassLabel::Crackle, ClassLabel::Wheeze, ClassLabel::Both]
}

/// Correct abnormal predictions over all abnormal cycles.
pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let hits: u64 = abnormal().iter().map(|&c| cm.correct(c)).sum();
    let total: u64 = abnormal().iter().map(|&c| cm.row_total(c)).sum();
    if total == 0 {
        return Err(MetricsError::Undefined {
            metric: "sensitivity",
            reason: "no abnormal cycles".into(),
        });
    }
    Ok(hits as f64 / total as f64)
}

/// Correct Normal predictions over all Normal cycles.
pub fn specificity(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.row_total(ClassLabel::Normal);
    if total == 0 {
        return Err(MetricsError::Undefined {
            metric: "specificity",
            reason: "no normal cycles".into(),
        });
    }
    Ok(cm.correct(ClassLabel::Normal) as f64 / total as f64)
}

/// ICBHI score: mean of sensitivity and specificity.
pub fn score(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    Ok((sensitivity(cm)? + specificity(cm)?) / 2.0)
}

/// Unweighted per-class summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub uar: f64,
    pub macro_precision: f64,
    pub recall: [f64; 4],
    /// `None` for a class that was never predicted.
    pub precision: [Option<f64>; 4],
    pub excluded_from_precision: Vec<ClassLabel>,
}

/// Unweighted average recall and macro precision.
///
/// Every class row must be non-empty. Classes that are never predicted are
/// left out of the macro precision (with a warning) rather than counted as 0.
pub fn uar_and_macro_precision(cm: &ConfusionMatrix) -> Result<ClassSummary, MetricsError> {
    let mut recall = [0.0; 4];
    let mut precision = [None; 4];
    let mut excluded = Vec::new();
    for class in ClassLabel::ALL {
        let row = cm.row_total(class);
        if row == 0 {
            return Err(MetricsError::Undefined {
                metric: "uar",
                reason: format!("no {} cycles", class.name()),
            });
        }
        recall[class.index()] = cm.correct(class) as f64 / row as f64;
        let col = cm.column_total(class);
        if col == 0 {
            log::warn!(
                "class {} never predicted; excluded from macro precision",
                class.name()
            );
            excluded.push(class);
        } else {
            precision[class.index()] = Some(cm.correct(class) as f64 / col as f64);
        }
    }
    let defined: Vec<f64> = precision.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(MetricsError::Undefined {
            metric: "macro_precision",
            reason: "no predictions".into(),
        });
    }
    Ok(ClassSummary {
        uar: recall.iter().sum::<f64>() / 4.0,
        macro_precision: defined.iter().sum::<f64>() / defined.len() as f64,
        recall,
        precision,
        excluded_from_precision: excluded,
    })
}
