use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;

use super::{score, sensitivity, specificity, uar_and_macro_precision, ConfusionMatrix, MetricsError};

/// Every headline and per-class metric for one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub score: f64,
    pub uar: f64,
    pub macro_precision: f64,
    pub recall: [f64; 4],
    pub precision: [Option<f64>; 4],
    pub counts: [[u64; 4]; 4],
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self, MetricsError> {
        let se = sensitivity(cm)?;
        let sp = specificity(cm)?;
        let summary = uar_and_macro_precision(cm)?;
        Ok(Self {
            sensitivity: se,
            specificity: sp,
            score: score(cm)?,
            uar: summary.uar,
            macro_precision: summary.macro_precision,
            recall: summary.recall,
            precision: summary.precision,
            counts: *cm.counts(),
        })
    }
}

/// Which quantity fills the "Recall" column of a results-table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallReading {
    /// Four-class unweighted average recall.
    Uar,
    /// ICBHI sensitivity.
    Sensitivity,
}

/// `AS-ViT (ours), <precision>, <recall>, <score>` in percent, one decimal.
pub fn table_row(report: &MetricsReport, recall: RecallReading) -> String {
    let r = match recall {
        RecallReading::Uar => report.uar,
        RecallReading::Sensitivity => report.sensitivity,
    };
    format!(
        "AS-ViT (ours), {:.1}, {:.1}, {:.1}",
        100.0 * report.macro_precision,
        100.0 * r,
        100.0 * report.score
    )
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("metric,value\n");
    let mut row = |name: &str, value: Option<f64>| {
        match value {
            Some(v) => writeln!(out, "{name},{v:.4}"),
            None => writeln!(out, "{name},NA"),
        }
        .expect("writing to a String cannot fail");
    };
    row("sensitivity", Some(report.sensitivity));
    row("specificity", Some(report.specificity));
    row("score", Some(report.score));
    row("uar", Some(report.uar));
    row("macro_precision", Some(report.macro_precision));
    for class in ClassLabel::ALL {
        let key = class.name().to_lowercase();
        row(&format!("recall_{key}"), Some(report.recall[class.index()]));
    }
    for class in ClassLabel::ALL {
        let key = class.name().to_lowercase();
        row(&format!("precision_{key}"), report.precision[class.index()]);
    }
    out
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("truth\\predicted");
    for class in ClassLabel::ALL {
        out.push(',');
        out.push_str(class.name());
    }
    out.push('\n');
    for class in ClassLabel::ALL {
        out.push_str(class.name());
        for v in cm.counts()[class.index()] {
            write!(out, ",{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix, MetricsError> {
    let bad = |line: usize, reason: &str| MetricsError::Parse {
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).skip(1).collect();
    let expected: Vec<&str> = ClassLabel::ALL.iter().map(|c| c.name()).collect();
    if columns != expected {
        return Err(bad(1, "header must list Normal,Crackle,Wheeze,Both"));
    }
    let mut counts = [[0u64; 4]; 4];
    let mut seen = [false; 4];
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad(idx + 1, "expected 5 fields"));
        }
        let class = ClassLabel::from_name(fields[0]).ok_or_else(|| bad(idx + 1, "unknown class"))?;
        for (j, f) in fields[1..].iter().enumerate() {
            counts[class.index()][j] = f.parse().map_err(|_| bad(idx + 1, "non-integer count"))?;
        }
        seen[class.index()] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(bad(0, "missing class rows"));
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

/// Static heat-shaded grid with the count in each cell.
pub fn confusion_svg(cm: &ConfusionMatrix) -> String {
    const CELL: usize = 90;
    const LEFT: usize = 110;
    const TOP: usize = 60;
    let size_w = LEFT + 4 * CELL + 20;
    let size_h = TOP + 4 * CELL + 40;
    let max = cm.counts().iter().flatten().copied().max().unwrap_or(0).max(1);
    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size_w}" height="{size_h}" font-family="sans-serif" font-size="14">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{}" y="20" text-anchor="middle">predicted</text>"#,
        LEFT + 2 * CELL
    );
    for class in ClassLabel::ALL {
        let i = class.index();
        let _ = writeln!(
            w,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + i * CELL + CELL / 2,
            TOP - 10,
            class.name()
        );
        let _ = writeln!(
            w,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 10,
            TOP + i * CELL + CELL / 2 + 5,
            class.name()
        );
    }
    for (r, row) in cm.counts().iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let shade = 255 - (200 * v / max) as u8;
            let text = if shade < 128 { "white" } else { "black" };
            let (x, y) = (LEFT + c * CELL, TOP + r * CELL);
            let _ = writeln!(
                w,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            );
            let _ = writeln!(
                w,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{text}">{v}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 5
            );
        }
    }
    let _ = writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">true class (rows)</text>"#,
        LEFT + 2 * CELL,
        TOP + 4 * CELL + 25
    );
    svg.push_str("</svg>\n");
    svg
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub metrics_csv: PathBuf,
    pub confusion_csv: PathBuf,
    pub confusion_svg: PathBuf,
}

/// Writes `metrics.csv`, `confusion.csv` and `confusion.svg` into `dir`.
pub fn emit_report(report: &MetricsReport, cm: &ConfusionMatrix, dir: &Path) -> Result<ReportFiles, MetricsError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MetricsError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = ReportFiles {
        metrics_csv: dir.join("metrics.csv"),
        confusion_csv: dir.join("confusion.csv"),
        confusion_svg: dir.join("confusion.svg"),
    };
    fs::write(&files.metrics_csv, metrics_csv(report)).map_err(io(&files.metrics_csv))?;
    fs::write(&files.confusion_csv, confusion_csv(cm)).map_err(io(&files.confusion_csv))?;
    fs::write(&files.confusion_svg, confusion_svg(cm)).map_err(io(&files.confusion_svg))?;
    Ok(files)
}
