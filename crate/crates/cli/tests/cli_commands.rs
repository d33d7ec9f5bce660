mod common;

use std::fs;
use std::path::Path;

use asvit_cli::commands::{self, CheckpointMeta};
use asvit_cli::{RunConfig, EXIT_CONFIG, EXIT_DATA, EXIT_OK};
use asvit_core::audio::{encode_wav, SampleFormat};
use asvit_core::dataset::parse_index;
use asvit_core::features::{NormStats, StatsSource};
use asvit_core::model::{save_checkpoint, ModelParams};
use serde_json::json;

use common::{cli, synth_corpus};

fn write_recording(dir: &Path, name: &str, seconds: f64, cycles: &[(f64, f64, u8, u8)]) {
    let n = (seconds * 4000.0) as usize;
    let samples: Vec<f32> = (0..n).map(|i| 0.2 * (i as f32 * 0.07).sin()).collect();
    fs::write(dir.join(format!("{name}.wav")), encode_wav(&[&samples], 4000, SampleFormat::Pcm16)).unwrap();
    let text: String = cycles.iter().map(|(s, e, c, w)| format!("{s}\t{e}\t{c}\t{w}\n")).collect();
    fs::write(dir.join(format!("{name}.txt")), text).unwrap();
}

fn manifest_line(name: &str, partition: &str) -> String {
    json!({ "wav": format!("{name}.wav"), "annotation": format!("{name}.txt"), "partition": partition }).to_string() + "\n"
}

#[test]
fn prepare_indexes_every_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let a = "101_1b1_Al_sc_Meditron";
    let b = "102_1b1_Ar_sc_Meditron";
    write_recording(
        dir.path(),
        a,
        10.0,
        &[(0.0, 2.0, 0, 0), (2.0, 4.0, 1, 0), (4.0, 6.0, 0, 1), (6.0, 8.0, 1, 1), (8.0, 9.5, 0, 0)],
    );
    write_recording(dir.path(), b, 6.0, &[(0.5, 2.5, 0, 0), (2.5, 4.0, 1, 0), (4.0, 6.0, 0, 0)]);
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(&manifest, manifest_line(a, "train") + &manifest_line(b, "train")).unwrap();
    let index = dir.path().join("index.jsonl");
    let (code, out) = cli(&["prepare", "--manifest", manifest.to_str().unwrap(), "--out", index.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{out}");
    let records = parse_index(&fs::read_to_string(&index).unwrap()).unwrap();
    assert_eq!(records.len(), 8);
    assert_eq!(records[0].patient, 101);
    assert_eq!(records[7].patient, 102);
    assert!(out.contains("cycles: 8"), "{out}");
    assert!(out.contains("patients: 2"), "{out}");
    assert!(out.contains("class Normal: 4"), "{out}");
}

#[test]
fn prepare_reports_broken_entries_but_keeps_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let good = "101_1b1_Al_sc_Meditron";
    write_recording(dir.path(), good, 4.0, &[(0.0, 2.0, 0, 0), (2.0, 4.0, 1, 0)]);
    fs::write(dir.path().join("103_1b1_Al_sc_Meditron.wav"), b"RIFF....").unwrap();
    fs::write(dir.path().join("103_1b1_Al_sc_Meditron.txt"), "0 1 0 0\n").unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(
        &manifest,
        manifest_line(good, "train") + &manifest_line("103_1b1_Al_sc_Meditron", "train") + &manifest_line("missing_name", "test"),
    )
    .unwrap();
    let index = dir.path().join("index.jsonl");
    let (code, out) = cli(&["prepare", "--manifest", manifest.to_str().unwrap(), "--out", index.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
    assert_eq!(parse_index(&fs::read_to_string(&index).unwrap()).unwrap().len(), 2);
    assert_eq!(out.matches("skipped").count(), 2, "{out}");
}

#[test]
fn empty_manifest_gives_an_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(&manifest, "").unwrap();
    let index = dir.path().join("index.jsonl");
    let (code, out) = cli(&["prepare", "--manifest", manifest.to_str().unwrap(), "--out", index.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("warning: empty index"), "{out}");
    assert_eq!(fs::read_to_string(&index).unwrap(), "");
}

#[test]
fn unsupported_split_ratio_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, r#"{ "split": { "ratio": "70:30" } }"#).unwrap();
    let (code, _) = cli(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    let err = RunConfig::resolve(&json!({ "split": { "ratio": "70:30" } })).unwrap_err();
    assert!(err.to_string().contains("split.ratio"), "{err}");
    let (code, _) = cli(&["train", "--split-ratio", "70:30"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(cli(&["fly"]).0, EXIT_CONFIG);
    assert_eq!(cli(&["train", "--bogus"]).0, EXIT_CONFIG);
}

fn first_wav(dir: &Path) -> std::path::PathBuf {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "wav"))
        .unwrap()
}

fn save_with_meta(path: &Path, params: &ModelParams, cfg: &RunConfig) {
    let stats = NormStats {
        mean: 0.0,
        std: 1.0,
        source: StatsSource::TrainSplit,
    };
    let meta = CheckpointMeta::new(cfg, stats, 0).to_value();
    save_checkpoint(path, params, &cfg.model.config, &meta).unwrap();
}

fn short_config(out: &Path, extra: serde_json::Value) -> RunConfig {
    let mut v = json!({ "audio": { "target_s": 2.5 }, "output_dir": out });
    if let (Some(base), Some(more)) = (v.as_object_mut(), extra.as_object()) {
        for (k, val) in more {
            base.insert(k.clone(), val.clone());
        }
    }
    RunConfig::resolve(&v).unwrap()
}

#[test]
fn toy_checkpoint_against_large_config_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(&dir.path().join("corpus"), 2, 2, 1);
    let toy = short_config(dir.path(), json!({}));
    let ckpt = dir.path().join("toy.ckpt");
    save_with_meta(&ckpt, &ModelParams::init(&toy.model.config, 0).unwrap(), &toy);
    let mut out = Vec::new();
    let large = RunConfig::resolve(&json!({ "model": { "preset": "paper" }, "data": { "manifest": manifest } })).unwrap();
    let err = commands::evaluate(&large, &ckpt, false, None, &mut out).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    assert!(err.to_string().contains("parameter "), "{err}");
}

#[test]
fn zero_checkpoint_predicts_uniform_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(&dir.path().join("corpus"), 1, 1, 2);
    let wav = first_wav(&dir.path().join("corpus"));
    let cfg = short_config(dir.path(), json!({}));
    let ckpt = dir.path().join("zero.ckpt");
    save_with_meta(&ckpt, &ModelParams::zeros(&cfg.model.config).unwrap(), &cfg);
    let w = wav.to_str().unwrap();
    let (code, out) = cli(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--wav", w, "--wav", w, "--times", "0-2.6,2.7-5.0"]);
    assert_eq!(code, EXIT_OK, "{out}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    for line in &lines {
        assert!(line.ends_with("Normal\t0.2500\t0.2500\t0.2500\t0.2500"), "{line}");
    }
    assert_eq!(lines[0], lines[2]);
    assert_eq!(lines[1], lines[3]);

    let (code, out) = cli(&["predict", "--checkpoint", ckpt.to_str().unwrap(), "--wav", w, "--json"]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let sum: f64 = v["probabilities"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn predict_flags_unreadable_files_after_processing_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(&dir.path().join("corpus"), 1, 1, 3);
    let wav = first_wav(&dir.path().join("corpus"));
    let cfg = short_config(dir.path(), json!({}));
    let ckpt = dir.path().join("zero.ckpt");
    save_with_meta(&ckpt, &ModelParams::zeros(&cfg.model.config).unwrap(), &cfg);
    let missing = dir.path().join("nope.wav");
    let (code, out) = cli(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--wav",
        missing.to_str().unwrap(),
        "--wav",
        wav.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_DATA);
    assert_eq!(out.lines().count(), 1, "{out}");
}

fn history_rows(run: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(run.join("history.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn evaluate_after_train_matches_the_last_history_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(&dir.path().join("corpus"), 10, 5, 4);
    let run = dir.path().join("run");
    let cfg = short_config(
        &run,
        json!({ "data": { "manifest": manifest }, "train": { "epochs": 2, "learning_rate": 1e-3 } }),
    );
    let mut sink = Vec::new();
    let summary = commands::train(&cfg, false, &mut sink).unwrap();
    assert_eq!(summary.history.len(), 2);
    for f in ["config.json", "history.csv", "split.json", "state.bin", "checkpoints/last.ckpt", "checkpoints/best.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let last = history_rows(&run).pop().unwrap();
    let report = commands::evaluate(&cfg, &run.join("checkpoints/last.ckpt"), false, None, &mut sink).unwrap();
    let parsed: Vec<f64> = last[2..6].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(parsed, vec![report.sensitivity, report.specificity, report.score, report.uar]);
    assert!(run.join("evaluation/metrics.csv").exists());

    let reloaded = RunConfig::resolve(&RunConfig::load_value(&run.join("config.json")).unwrap()).unwrap();
    assert_eq!(reloaded, cfg);
}

#[test]
fn resumed_run_matches_a_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(&dir.path().join("corpus"), 5, 5, 5);
    let config = |run: &Path, epochs: usize| {
        short_config(run, json!({ "data": { "manifest": manifest }, "train": { "epochs": epochs } }))
    };
    let mut sink = Vec::new();
    let straight = dir.path().join("straight");
    commands::train(&config(&straight, 3), false, &mut sink).unwrap();
    let split = dir.path().join("split");
    commands::train(&config(&split, 2), false, &mut sink).unwrap();
    commands::train(&config(&split, 3), true, &mut sink).unwrap();
    assert_eq!(
        fs::read(straight.join("history.csv")).unwrap(),
        fs::read(split.join("history.csv")).unwrap()
    );
    assert_eq!(
        fs::read(straight.join("checkpoints/last.ckpt")).unwrap(),
        fs::read(split.join("checkpoints/last.ckpt")).unwrap()
    );

    let mut changed = config(&split, 3);
    changed.train.learning_rate = 1.0;
    let err = commands::train(&changed, true, &mut sink).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}

#[test]
fn warm_cache_reproduces_the_cold_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_corpus(&dir.path().join("corpus"), 5, 5, 6);
    let cache = dir.path().join("cache");
    let config = |run: &Path| {
        short_config(
            run,
            json!({ "data": { "manifest": manifest, "cache_dir": cache }, "train": { "epochs": 1 } }),
        )
    };
    let mut sink = Vec::new();
    commands::train(&config(&dir.path().join("cold")), false, &mut sink).unwrap();
    let cached = fs::read_dir(&cache).unwrap().count();
    assert_eq!(cached, 20);
    commands::featurize(&config(&dir.path().join("unused")), &mut sink).unwrap();
    commands::train(&config(&dir.path().join("warm")), false, &mut sink).unwrap();
    assert_eq!(
        fs::read(dir.path().join("cold/history.csv")).unwrap(),
        fs::read(dir.path().join("warm/history.csv")).unwrap()
    );
}

#[test]
fn report_regenerates_files_from_a_confusion_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cm = asvit_core::metrics::ConfusionMatrix::from_counts([[8, 1, 1, 0], [2, 5, 0, 1], [1, 0, 6, 1], [0, 1, 1, 4]]);
    let csv = dir.path().join("confusion.csv");
    fs::write(&csv, asvit_core::metrics::confusion_csv(&cm)).unwrap();
    let out_dir = dir.path().join("report");
    let (code, out) = cli(&["report", "--confusion", csv.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    // Se = (5 + 6 + 4) / 22, Sp = 8 / 10.
    assert!(out.contains(&format!("Se {:.4}", 15.0 / 22.0)), "{out}");
    assert!(out.contains("Sp 0.8000"), "{out}");
    for f in ["metrics.csv", "confusion.csv", "confusion.svg"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let (code, _) = cli(&["report", "--confusion", dir.path().join("absent.csv").to_str().unwrap(), "--out", "x"]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn evaluate_on_an_empty_split_surfaces_undefined_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    fs::write(&manifest, "").unwrap();
    let cfg = short_config(dir.path(), json!({ "data": { "manifest": manifest } }));
    let ckpt = dir.path().join("zero.ckpt");
    save_with_meta(&ckpt, &ModelParams::zeros(&cfg.model.config).unwrap(), &cfg);
    let err = commands::evaluate(&cfg, &ckpt, false, None, &mut Vec::new()).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_DATA);
    assert!(err.to_string().contains("undefined"), "{err}");
}
