//! Log-mel spectrograms, dataset standardization and patch geometry.

pub mod cache;
mod config;
mod normalize;
mod patches;
mod spectrogram;

pub use config::FeatureConfig;
pub use normalize::{normalize, NormStats, STD_FLOOR};
pub use patches::{extract_patches, patch_grid, patches_along, PatchGrid, PATCH, STRIDE};
pub use spectrogram::{
    hann_window, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, pad_frames, stft_magnitude, Featurizer, Matrix,
    Spectrogram, StatsSource,
};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature config error: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
