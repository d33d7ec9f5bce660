use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use asvit_core::audio::{load_wav, slice_cycle};
use asvit_core::dataset::{
    build_index, build_subject_independent_split, corpus_statistics, format_index, parse_index, parse_manifest,
    ClassLabel, CycleAnnotation, IndexRecord, ManifestEntry, Partition, SplitSpec,
};
use asvit_core::features::NormStats;
use asvit_core::metrics::{
    emit_report, parse_confusion_csv, table_row, ConfusionMatrix, MetricsReport, RecallReading,
};
use asvit_core::model::{forward_patches, load_checkpoint, save_checkpoint, Checkpoint, ModelParams};
use asvit_core::synthetic::{write_corpus, SyntheticSpec};
use asvit_core::training::{
    evaluate as evaluate_instances, load_instances, load_run_state, save_run_state, EpochRecord, Instance, Pipeline,
    RunState, Trainer,
};
use serde::{Deserialize, Serialize};

use crate::config::{AudioConfig, RunConfig, SplitMode};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const STATE_FILE: &str = "state.bin";
pub const SPLIT_FILE: &str = "split.json";
pub const BEST_CHECKPOINT: &str = "checkpoints/best.ckpt";
pub const LAST_CHECKPOINT: &str = "checkpoints/last.ckpt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<(), CliError> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| CliError::Data(format!("cannot write output: {e}")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Reads a manifest; relative paths resolve against the given roots or,
/// failing those, the manifest's own folder.
fn read_entries(manifest: &Path, wav_root: Option<&Path>, annotation_root: Option<&Path>) -> Result<Vec<ManifestEntry>, CliError> {
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let here = manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut entries = parse_manifest(&text, Path::new(""))?;
    for e in &mut entries {
        if e.wav.is_relative() {
            e.wav = wav_root.unwrap_or(&here).join(&e.wav);
        }
        if e.annotation.is_relative() {
            e.annotation = annotation_root.unwrap_or(&here).join(&e.annotation);
        }
    }
    Ok(entries)
}

fn summary_lines(records: &[IndexRecord]) -> Result<Vec<String>, CliError> {
    let cycles = records.iter().map(IndexRecord::to_cycle).collect::<Result<Vec<_>, _>>()?;
    let stats = corpus_statistics(&cycles);
    let mut lines = vec![format!("cycles: {}", stats.count), format!("patients: {}", stats.patients)];
    for label in ClassLabel::ALL {
        lines.push(format!("class {}: {}", label.name(), stats.per_class[label.index()]));
    }
    if let Some(d) = stats.durations {
        lines.push(format!(
            "cycle duration: mean {:.3} s, min {:.3} s, max {:.3} s",
            d.mean_s, d.min_s, d.max_s
        ));
    }
    let mut per_patient = std::collections::BTreeMap::<u32, usize>::new();
    for r in records {
        *per_patient.entry(r.patient).or_default() += 1;
    }
    for (p, n) in per_patient {
        lines.push(format!("patient {p}: {n} cycles"));
    }
    Ok(lines)
}

/// Writes the cycle index. Entries whose recording is missing or fails to
/// decode, or whose annotation cannot be parsed, are listed and skipped;
/// the command then fails with the data exit code after writing the rest.
pub fn prepare(
    manifest: &Path,
    index: &Path,
    wav_root: Option<&Path>,
    annotation_root: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let entries = read_entries(manifest, wav_root, annotation_root)?;
    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    let mut usable = Vec::new();
    for e in entries {
        match fs::read(&e.wav)
            .map_err(|err| err.to_string())
            .and_then(|b| asvit_core::audio::decode_wav(&b).map_err(|err| err.to_string()))
        {
            Ok(_) => usable.push(e),
            Err(reason) => failures.push((e.wav.clone(), reason)),
        }
    }
    let (records, index_failures) = build_index(&usable);
    failures.extend(index_failures.into_iter().map(|f| (f.wav, f.reason)));
    write_file(index, format_index(&records))?;
    if records.is_empty() {
        log::warn!("the index is empty");
        say(out, "warning: empty index")?;
    }
    for line in summary_lines(&records)? {
        say(out, line)?;
    }
    say(out, format!("index: {} ({} records)", index.display(), records.len()))?;
    if failures.is_empty() {
        return Ok(());
    }
    for (wav, reason) in &failures {
        say(out, format!("skipped {}: {reason}", wav.display()))?;
    }
    Err(CliError::Data(format!(
        "{} recording(s) skipped; the index holds the remaining {} cycles",
        failures.len(),
        records.len()
    )))
}

fn load_records(cfg: &RunConfig) -> Result<Vec<IndexRecord>, CliError> {
    if let Some(index) = &cfg.data.index {
        let text = fs::read_to_string(index).map_err(io_err(index))?;
        return Ok(parse_index(&text)?);
    }
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Config("data: neither an index nor a manifest is configured".into()))?;
    let entries = read_entries(manifest, cfg.data.wav_root.as_deref(), cfg.data.annotation_root.as_deref())?;
    let (records, failures) = build_index(&entries);
    for f in &failures {
        log::warn!("skipping {}: {}", f.wav.display(), f.reason);
    }
    Ok(records)
}

/// Decoded cycles of the configured corpus. Unreadable cycles are logged
/// and dropped.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<Instance>, CliError> {
    let records = load_records(cfg)?;
    let (instances, skipped) = load_instances(&records, cfg.audio.sample_rate);
    for s in &skipped {
        log::warn!("skipping cycle {} of {}: {}", s.id, s.wav.display(), s.reason);
    }
    Ok(instances)
}

fn patients(instances: &[Instance], partition: Partition) -> BTreeSet<u32> {
    instances.iter().filter(|i| i.partition == partition).map(|i| i.patient).collect()
}

/// The patient split and the instances it covers, plus the official test
/// instances held out for a final report (resplit mode only).
pub fn split_dataset(cfg: &RunConfig, instances: Vec<Instance>) -> Result<(SplitSpec, Vec<Instance>, Vec<Instance>), CliError> {
    match cfg.split.mode {
        SplitMode::Resplit => {
            let (train, test): (Vec<Instance>, Vec<Instance>) =
                instances.into_iter().partition(|i| i.partition == Partition::Train);
            let split = build_subject_independent_split(&patients(&train, Partition::Train), cfg.split.ratio, cfg.split.seed)?;
            Ok((split, train, test))
        }
        SplitMode::Official => {
            let split = SplitSpec {
                ratio: cfg.split.ratio,
                seed: cfg.split.seed,
                train_patients: patients(&instances, Partition::Train),
                eval_patients: patients(&instances, Partition::Test),
            };
            if split.eval_patients.is_empty() {
                return Err(CliError::Data("official split mode needs test-partition recordings".into()));
            }
            Ok((split, instances, Vec::new()))
        }
    }
}

fn pipeline(cfg: &RunConfig) -> Result<Pipeline, CliError> {
    let p = Pipeline::new(cfg.features.clone(), cfg.audio.crop(), cfg.model.config.clone())?;
    Ok(match &cfg.data.cache_dir {
        Some(dir) => p.with_cache(dir),
        None => p,
    })
}

/// Fills the spectrogram cache for every cycle and writes the training-side
/// statistics next to it.
pub fn featurize(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = cfg
        .data
        .cache_dir
        .clone()
        .ok_or_else(|| CliError::Config("data.cache_dir: featurize needs a cache folder".into()))?;
    let instances = load_dataset(cfg)?;
    let p = pipeline(cfg)?;
    for inst in &instances {
        p.eval_spectrogram(inst)?;
    }
    let (split, usable, _) = split_dataset(cfg, instances.clone())?;
    let train_side: Vec<&Instance> = usable.iter().filter(|i| split.is_train(i.patient)).collect();
    let stats = p.fit_stats(train_side)?;
    let stats_path = dir.join("stats.json");
    write_file(&stats_path, serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
    say(out, format!("cached {} spectrograms in {}", instances.len(), dir.display()))?;
    say(out, format!("training statistics: mean {:.6}, std {:.6}", stats.mean, stats.std))
}

/// Extra fields stored with every checkpoint so that it can be used
/// without the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub preset: String,
    pub audio: AudioConfig,
    pub features: asvit_core::features::FeatureConfig,
    pub stats: NormStats,
    pub epoch: usize,
}

impl CheckpointMeta {
    pub fn new(cfg: &RunConfig, stats: NormStats, epoch: usize) -> Self {
        Self {
            preset: cfg.model.preset.clone(),
            audio: cfg.audio,
            features: cfg.features.clone(),
            stats,
            epoch,
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metadata serializes")
    }
}

fn checkpoint_meta(ckpt: &Checkpoint) -> Result<CheckpointMeta, CliError> {
    serde_json::from_value(ckpt.metadata.clone())
        .map_err(|e| CliError::Data(format!("checkpoint metadata is incomplete: {e}")))
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from("epoch,loss,Se,Sp,Score,UAR\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            r.loss,
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.score),
            opt(r.uar)
        )
        .expect("writing to a String cannot fail");
    }
    s
}

fn report_confusion(cm: &ConfusionMatrix, dir: &Path, out: &mut dyn Write) -> Result<MetricsReport, CliError> {
    let report = MetricsReport::from_confusion(cm)?;
    emit_report(&report, cm, dir)?;
    say(
        out,
        format!(
            "Se {:.4}  Sp {:.4}  Score {:.4}  UAR {:.4}  macro precision {:.4}",
            report.sensitivity, report.specificity, report.score, report.uar, report.macro_precision
        ),
    )?;
    say(out, format!("table row (recall = UAR): {}", table_row(&report, RecallReading::Uar)))?;
    say(
        out,
        format!("table row (recall = Se):  {}", table_row(&report, RecallReading::Sensitivity)),
    )?;
    Ok(report)
}

/// Result of `train` for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

pub fn train(cfg: &RunConfig, resume: bool, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let run = cfg.output_dir.clone();
    let config_path = run.join(CONFIG_FILE);
    if resume {
        // Only the epoch budget may change, so that a finished run can be extended.
        let mut previous = RunConfig::resolve(&RunConfig::load_value(&config_path)?)?;
        previous.train.epochs = cfg.train.epochs;
        if previous != *cfg {
            return Err(CliError::Config(format!(
                "resume: the configuration differs from {} in more than train.epochs",
                config_path.display()
            )));
        }
    }
    write_file(&config_path, cfg.to_json())?;

    let instances = load_dataset(cfg)?;
    let (split, usable, test) = split_dataset(cfg, instances)?;
    write_file(&run.join(SPLIT_FILE), serde_json::to_string_pretty(&split).expect("split serializes"))?;

    let p = pipeline(cfg)?;
    let train_side: Vec<&Instance> = usable.iter().filter(|i| split.is_train(i.patient)).collect();
    let stats = p.fit_stats(train_side)?;
    let p = p.with_stats(stats.clone());
    let trainer = Trainer::new(&p, &usable, &split, cfg.train.clone())?;
    say(
        out,
        format!(
            "training on {} cycles, validating on {} cycles",
            trainer.train_instances().len(),
            trainer.eval_instances().len()
        ),
    )?;

    let state_path = run.join(STATE_FILE);
    let mut state = if resume && state_path.exists() {
        load_run_state(&state_path)?
    } else {
        trainer.initial_state(ModelParams::init(&cfg.model.config, cfg.train.global_seed)?)?
    };

    let meta = |epoch: usize| CheckpointMeta::new(cfg, stats.clone(), epoch).to_value();
    let save = |state: &RunState, record: &EpochRecord| -> Result<(), asvit_core::training::TrainError> {
        let history_path = run.join(HISTORY_FILE);
        std::fs::write(&history_path, history_csv(&state.history)).map_err(|source| {
            asvit_core::training::TrainError::Io {
                path: history_path.clone(),
                source,
            }
        })?;
        save_checkpoint(&run.join(LAST_CHECKPOINT), &state.params, &state.model, &meta(state.epoch))?;
        if state.best.map(|b| b.epoch) == Some(record.epoch) {
            save_checkpoint(&run.join(BEST_CHECKPOINT), &state.best_params, &state.model, &meta(record.epoch))?;
        }
        save_run_state(&state_path, state)
    };
    write_file(&run.join(HISTORY_FILE), history_csv(&state.history))?;
    trainer.run(&mut state, |s, r| {
        log::info!("epoch {} done, loss {:.5}", r.epoch, r.loss);
        save(s, r)
    })?;

    let last = run.join(LAST_CHECKPOINT);
    if !last.exists() {
        save_checkpoint(&last, &state.params, &state.model, &meta(state.epoch))?;
    }
    let best = run.join(BEST_CHECKPOINT);
    if state.best.is_none() {
        save_checkpoint(&best, &state.params, &state.model, &meta(state.epoch))?;
    }

    if !trainer.eval_instances().is_empty() {
        let cm = trainer.evaluate(&state.params)?;
        say(out, "validation (last epoch):")?;
        if let Err(e) = report_confusion(&cm, &run.join("reports/validation"), out) {
            log::warn!("validation report skipped: {e}");
        }
    }
    if !test.is_empty() {
        let refs: Vec<&Instance> = test.iter().collect();
        let best_params = if state.best.is_some() { &state.best_params } else { &state.params };
        let cm = evaluate_instances(&p, &refs, best_params)?;
        say(out, "official test portion (best checkpoint):")?;
        if let Err(e) = report_confusion(&cm, &run.join("reports/test"), out) {
            log::warn!("test report skipped: {e}");
        }
    }
    say(out, format!("run directory: {}", run.display()))?;
    Ok(TrainSummary {
        run_dir: run,
        history: state.history,
        best_epoch: state.best.map(|b| b.epoch),
    })
}

/// Fixed-start evaluation of a checkpoint on the configured split.
pub fn evaluate(
    cfg: &RunConfig,
    checkpoint: &Path,
    test: bool,
    report_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<MetricsReport, CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    ckpt.check_against(&cfg.model.config)?;
    let meta = checkpoint_meta(&ckpt)?;
    if meta.features != cfg.features || meta.audio != cfg.audio {
        return Err(CliError::Config(
            "features/audio: the configuration differs from the checkpoint's front end".into(),
        ));
    }
    let instances = load_dataset(cfg)?;
    let p = pipeline(cfg)?.with_stats(meta.stats);
    let chosen: Vec<Instance> = if instances.is_empty() {
        Vec::new()
    } else {
        let (split, usable, held_out) = split_dataset(cfg, instances)?;
        if test {
            match cfg.split.mode {
                SplitMode::Resplit => held_out,
                SplitMode::Official => usable.into_iter().filter(|i| split.is_eval(i.patient)).collect(),
            }
        } else {
            usable.into_iter().filter(|i| split.is_eval(i.patient)).collect()
        }
    };
    let refs: Vec<&Instance> = chosen.iter().collect();
    let cm = evaluate_instances(&p, &refs, &ckpt.params)?;
    say(out, format!("evaluated {} cycles", cm.total()))?;
    let dir = report_dir.map_or_else(|| cfg.output_dir.join("evaluation"), Path::to_path_buf);
    report_confusion(&cm, &dir, out)
}

fn parse_times(spec: &str) -> Result<Vec<(f64, f64)>, CliError> {
    spec.split(',')
        .map(|part| {
            let (a, b) = part
                .split_once('-')
                .ok_or_else(|| CliError::Usage(format!("--times entry {part:?} must be start-end")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("--times entry {part:?} is not numeric")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

#[derive(Serialize)]
struct Prediction<'a> {
    wav: &'a Path,
    start_s: f64,
    end_s: f64,
    label: &'static str,
    probabilities: Vec<f64>,
}

/// One line per cycle: file, cycle bounds, predicted label and the four
/// class probabilities. Files that fail are reported and make the command
/// exit with the data code after the others are processed.
pub fn predict(checkpoint: &Path, wavs: &[PathBuf], times: Option<&str>, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let meta = checkpoint_meta(&ckpt)?;
    let p = Pipeline::new(meta.features.clone(), meta.audio.crop(), ckpt.config.clone())?.with_stats(meta.stats.clone());
    let bounds = times.map(parse_times).transpose()?;
    let mut failed = Vec::new();
    for wav in wavs {
        let recording = match load_wav(wav, meta.audio.sample_rate) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("error\t{}\t{e}", wav.display());
                failed.push(wav.clone());
                continue;
            }
        };
        let cycles = bounds.clone().unwrap_or_else(|| vec![(0.0, recording.duration_s())]);
        for (start, end) in cycles {
            let waveform = CycleAnnotation::new(start, end, false, false)
                .map_err(CliError::from)
                .and_then(|a| slice_cycle(&recording, &a).map_err(|e| CliError::Data(e.to_string())));
            let waveform = match waveform {
                Ok(w) => w,
                Err(e) => {
                    eprintln!("error\t{}\t{start}-{end}\t{e}", wav.display());
                    failed.push(wav.clone());
                    continue;
                }
            };
            let inst = Instance {
                id: 0,
                patient: 0,
                label: ClassLabel::Normal,
                partition: Partition::Test,
                source: format!("{}@{start}-{end}", wav.display()),
                waveform,
            };
            let output = forward_patches(&p.eval_patches(&inst)?, &ckpt.params, &ckpt.config)?;
            let probs = output.probabilities();
            let label = output.predict().name();
            if json {
                let line = serde_json::to_string(&Prediction {
                    wav,
                    start_s: start,
                    end_s: end,
                    label,
                    probabilities: probs,
                })
                .expect("predictions serialize");
                say(out, line)?;
            } else {
                let cols: Vec<String> = probs.iter().map(|v| format!("{v:.4}")).collect();
                say(
                    out,
                    format!("{}\t{start:.3}-{end:.3}\t{label}\t{}", wav.display(), cols.join("\t")),
                )?;
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{} recording(s) or cycle(s) could not be classified", failed.len())))
    }
}

pub fn report(confusion: &Path, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(confusion).map_err(io_err(confusion))?;
    let cm = parse_confusion_csv(&text)?;
    report_confusion(&cm, dir, out).map(|_| ())
}

pub fn synth(dir: &Path, spec: &SyntheticSpec, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = write_corpus(dir, spec)?;
    say(
        out,
        format!(
            "wrote {} recordings with {} cycles; manifest {}",
            corpus.entries.len(),
            corpus.cycles,
            corpus.manifest.display()
        ),
    )
}
