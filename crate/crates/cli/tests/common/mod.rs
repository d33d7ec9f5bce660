#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use asvit_core::dataset::{
    format_annotation_file, parse_annotation_file, parse_filename, DatasetError, RecordingMeta,
};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

/// Checks every filename golden; returns the number of cases.
pub fn check_filename_goldens() -> Result<usize, String> {
    let cases = rows(&fixtures().join("filenames.tsv"));
    for row in &cases {
        let name = &row[0];
        match (row[1].as_str(), parse_filename(name)) {
            ("ok", Ok(meta)) => {
                let got = [
                    meta.patient_id.to_string(),
                    meta.recording_index.clone(),
                    meta.chest_location.token().to_string(),
                    meta.acquisition_mode.token().to_string(),
                    meta.equipment.clone(),
                ];
                if got[..] != row[2..7] {
                    return Err(format!("{name}: parsed {got:?}, golden {:?}", &row[2..7]));
                }
                let again = parse_filename(&meta.to_string()).map_err(|e| format!("{name}: reparse failed: {e}"))?;
                if again != meta {
                    return Err(format!("{name}: round trip gave {again:?}"));
                }
                let _: &RecordingMeta = &again;
            }
            ("err", Err(DatasetError::Filename { field, .. })) => {
                let want = row.get(2).map(String::as_str).unwrap_or("");
                if field != want {
                    return Err(format!("{name}: error names field {field:?}, golden {want:?}"));
                }
            }
            (want, got) => return Err(format!("{name}: expected {want}, got {got:?}")),
        }
    }
    Ok(cases.len())
}

/// Checks annotation goldens: valid files against their expected cycles
/// (including a format/parse round trip), invalid ones against the
/// reported line. Returns the number of files checked.
pub fn check_annotation_goldens() -> Result<usize, String> {
    let dir = fixtures().join("annotations");
    let mut checked = 0;
    let mut names: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    names.sort();
    for path in names.iter().filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("ok_")) {
        let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
        let parsed = parse_annotation_file(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let golden: Vec<(f64, f64, bool, bool)> =
            serde_json::from_str(&fs::read_to_string(path.with_extension("golden.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let got: Vec<(f64, f64, bool, bool)> = parsed.iter().map(|c| (c.start_s, c.end_s, c.crackle, c.wheeze)).collect();
        if got != golden {
            return Err(format!("{}: parsed {got:?}, golden {golden:?}", path.display()));
        }
        let reparsed = parse_annotation_file(&format_annotation_file(&parsed)).map_err(|e| e.to_string())?;
        if reparsed != parsed {
            return Err(format!("{}: round trip changed the cycles", path.display()));
        }
        checked += 1;
    }
    let errors = rows(&dir.join("errors.tsv"));
    for row in &errors {
        let want: usize = row[1].parse().unwrap();
        let text = fs::read_to_string(dir.join(&row[0])).map_err(|e| e.to_string())?;
        match parse_annotation_file(&text) {
            Err(DatasetError::Annotation { line, .. }) if line == want => checked += 1,
            other => return Err(format!("{}: expected an error on line {want}, got {other:?}", row[0])),
        }
    }
    let on_disk = names.iter().filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("err_")).count();
    if on_disk != errors.len() {
        return Err(format!("{on_disk} error fixtures on disk but {} listed in errors.tsv", errors.len()));
    }
    Ok(checked)
}

/// A small synthetic corpus written into `dir`; returns the manifest path.
pub fn synth_corpus(dir: &Path, per_class: usize, patients: usize, seed: u64) -> PathBuf {
    let spec = asvit_core::synthetic::SyntheticSpec {
        per_class,
        patients,
        seed,
        ..Default::default()
    };
    asvit_core::synthetic::write_corpus(dir, &spec).unwrap().manifest
}

/// Runs the command line in-process, returning (exit code, stdout).
pub fn cli(args: &[&str]) -> (u8, String) {
    let mut out = Vec::new();
    let mut full = vec!["asvit"];
    full.extend_from_slice(args);
    let code = match asvit_cli::run_args(full, &mut out) {
        Ok(()) => asvit_cli::EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };
    (code, String::from_utf8(out).unwrap())
}
