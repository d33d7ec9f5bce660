//! Command-line orchestration: corpus preparation, feature caching,
//! training, evaluation, prediction and report generation.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use asvit_core::dataset::DatasetError;
use asvit_core::features::FeatureError;
use asvit_core::metrics::MetricsError;
use asvit_core::model::ModelError;
use asvit_core::training::TrainError;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => EXIT_CONFIG,
            Self::Data(_) => EXIT_DATA,
            Self::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::Config(e.to_string()),
            TrainError::NonFinite { .. } => Self::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Tensor(_) => Self::Numeric(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::ParamMismatch { .. } => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Config(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  usage or configuration error (including checkpoint/config mismatch)
  2  data error (missing or corrupt files, undefined metrics, partial ingestion)
  3  numeric failure (non-finite loss or gradient)";

#[derive(Debug, Parser)]
#[command(name = "asvit", version, about = "Respiratory sound classification with a spectrogram transformer")]
#[command(after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Configuration file plus overrides, shared by commands that need a run
/// configuration.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON). Omitted fields take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override any field, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Output (run) directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model preset: toy or paper.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train:eval patient ratio, 60:40 or 80:20.
    #[arg(long)]
    pub split_ratio: Option<String>,
    /// resplit (ratio split of the official training portion) or official.
    #[arg(long)]
    pub split_mode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the cycle index from a manifest and print a corpus summary.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        /// Index file to write (JSON lines).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        wav_root: Option<PathBuf>,
        #[arg(long)]
        annotation_root: Option<PathBuf>,
    },
    /// Compute and cache fixed-start spectrograms for every cycle.
    Featurize {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Train and write config.json, history.csv, checkpoints and reports.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the run directory's saved state.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the evaluation split and write report files.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate the official test portion instead of the validation side.
        #[arg(long)]
        test: bool,
        /// Report folder (default: <run dir>/evaluation).
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Classify cycles of recordings with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Recording(s) to classify.
        #[arg(long, required = true)]
        wav: Vec<PathBuf>,
        /// Cycle boundaries as start-end seconds, comma separated; the whole
        /// recording is one cycle when omitted.
        #[arg(long)]
        times: Option<String>,
        /// Print full-precision JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Regenerate report files from a confusion-matrix CSV.
    Report {
        #[arg(long)]
        confusion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic four-class corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        patients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.6)]
        min_cycle_s: f64,
        #[arg(long, default_value_t = 4.0)]
        max_cycle_s: f64,
    },
}

/// Runs one parsed command, writing user-facing output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Prepare {
            manifest,
            out: index,
            wav_root,
            annotation_root,
        } => commands::prepare(&manifest, &index, wav_root.as_deref(), annotation_root.as_deref(), out),
        Command::Featurize { config, cache_dir } => {
            let mut cfg = config.resolve()?;
            if cache_dir.is_some() {
                cfg.data.cache_dir = cache_dir;
            }
            commands::featurize(&cfg, out)
        }
        Command::Train { config, resume } => commands::train(&config.resolve()?, resume, out).map(|_| ()),
        Command::Evaluate {
            config,
            checkpoint,
            test,
            report_dir,
        } => commands::evaluate(&config.resolve()?, &checkpoint, test, report_dir.as_deref(), out).map(|_| ()),
        Command::Predict {
            checkpoint,
            wav,
            times,
            json,
        } => commands::predict(&checkpoint, &wav, times.as_deref(), json, out),
        Command::Report { confusion, out: dir } => commands::report(&confusion, &dir, out),
        Command::Synth {
            out: dir,
            per_class,
            patients,
            seed,
            min_cycle_s,
            max_cycle_s,
        } => {
            let spec = asvit_core::synthetic::SyntheticSpec {
                per_class,
                patients,
                min_cycle_s,
                max_cycle_s,
                seed,
                ..Default::default()
            };
            commands::synth(&dir, &spec, out)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli, out)
}

impl ConfigArgs {
    /// File, then `--set` overrides, then the named flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        use serde_json::Value;
        let mut value = match &self.config {
            Some(path) => RunConfig::load_value(path)?,
            None => Value::Object(Default::default()),
        };
        for spec in &self.overrides {
            let (key, v) = config::parse_override(spec)?;
            config::set_path(&mut value, &key, v)?;
        }
        let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
        let flags: [(&str, Option<Value>); 10] = [
            ("data.manifest", self.manifest.as_ref().map(path)),
            ("data.index", self.index.as_ref().map(path)),
            ("output_dir", self.out.as_ref().map(path)),
            ("model.preset", self.preset.clone().map(Value::String)),
            ("train.epochs", self.epochs.map(Value::from)),
            ("train.global_seed", self.seed.map(Value::from)),
            ("train.learning_rate", self.lr.map(Value::from)),
            ("train.batch_size", self.batch_size.map(Value::from)),
            ("split.ratio", self.split_ratio.clone().map(Value::String)),
            ("split.mode", self.split_mode.clone().map(Value::String)),
        ];
        for (key, v) in flags {
            if let Some(v) = v {
                config::set_path(&mut value, key, v)?;
            }
        }
        RunConfig::resolve(&value)
    }
}
