use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::features::{patch_grid, PatchGrid, PATCH, STRIDE};

use super::ModelError;

/// Network hyperparameters plus the input geometry they were built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub patch: usize,
    pub stride: usize,
    pub mel_bins: usize,
    pub frames: usize,
    pub init_std: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    fn with_dims(layers: usize, heads: usize, embed_dim: usize, mlp_dim: usize, mel_bins: usize, frames: usize) -> Self {
        Self {
            layers,
            heads,
            embed_dim,
            mlp_dim,
            num_classes: ClassLabel::COUNT,
            patch: PATCH,
            stride: STRIDE,
            mel_bins,
            frames,
            init_std: 0.02,
            ln_eps: 1e-6,
        }
    }

    /// 12 layers, 12 heads, width 768, MLP 3072.
    pub fn paper(mel_bins: usize, frames: usize) -> Self {
        Self::with_dims(12, 12, 768, 3072, mel_bins, frames)
    }

    /// 2 layers, 4 heads, width 32, MLP 64.
    pub fn toy(mel_bins: usize, frames: usize) -> Self {
        Self::with_dims(2, 4, 32, 64, mel_bins, frames)
    }

    pub fn preset(name: &str, mel_bins: usize, frames: usize) -> Result<Self, ModelError> {
        match name {
            "paper" => Ok(Self::paper(mel_bins, frames)),
            "toy" => Ok(Self::toy(mel_bins, frames)),
            other => Err(ModelError::Config(format!(
                "unknown model preset {other:?} (expected \"paper\" or \"toy\")"
            ))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn grid(&self) -> Result<PatchGrid, ModelError> {
        Ok(patch_grid(self.mel_bins, self.frames)?)
    }

    pub fn n_patches(&self) -> Result<usize, ModelError> {
        Ok(self.grid()?.count())
    }

    /// Patches plus the two prefix tokens.
    pub fn seq_len(&self) -> Result<usize, ModelError> {
        Ok(self.n_patches()? + 2)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        for (name, v) in [
            ("layers", self.layers),
            ("heads", self.heads),
            ("embed_dim", self.embed_dim),
            ("mlp_dim", self.mlp_dim),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return fail(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.num_classes != ClassLabel::COUNT {
            return fail(format!("num_classes must be {}, got {}", ClassLabel::COUNT, self.num_classes));
        }
        if self.patch != PATCH || self.stride != STRIDE {
            return fail(format!(
                "patch {}/stride {} unsupported; only {PATCH}/{STRIDE}",
                self.patch, self.stride
            ));
        }
        if !(self.init_std > 0.0 && self.ln_eps > 0.0) {
            return fail("init_std and ln_eps must be positive".into());
        }
        self.grid()?;
        Ok(())
    }
}
