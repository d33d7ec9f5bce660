//! ICBHI challenge scoring: sensitivity, specificity and score, plus
//! unweighted average recall, macro precision and report files.

mod confusion;
mod report;

use std::path::PathBuf;

pub use confusion::{score, sensitivity, specificity, uar_and_macro_precision, ClassSummary, ConfusionMatrix};
pub use report::{
    confusion_csv, confusion_svg, emit_report, metrics_csv, parse_confusion_csv, table_row, MetricsReport,
    RecallReading, ReportFiles,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },
    #[error("confusion csv line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
