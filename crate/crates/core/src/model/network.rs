use crate::dataset::ClassLabel;
use crate::features::{extract_patches, Spectrogram};
use crate::tensor::{Tape, Tensor, Var};

use super::{ModelConfig, ModelError, ModelParams, LAYER_PARAMS};

/// Parameters of a [`ModelParams`] recorded on a tape, in layout order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Handles to one encoder layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub qkv: Var,
    pub proj: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl BoundParams {
    /// Records every tensor as a trainable leaf.
    pub fn trainable(tape: &mut Tape, params: &ModelParams) -> Self {
        Self {
            vars: params.tensors().iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Records every tensor as a constant (inference).
    pub fn frozen(tape: &mut Tape, params: &ModelParams) -> Self {
        Self {
            vars: params.tensors().iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn patch_embed(&self) -> Var {
        self.vars[0]
    }

    pub fn cls_token(&self) -> Var {
        self.vars[1]
    }

    pub fn dist_token(&self) -> Var {
        self.vars[2]
    }

    pub fn pos_embed(&self) -> Var {
        self.vars[3]
    }

    pub fn layer_count(&self) -> usize {
        (self.vars.len() - 8) / LAYER_PARAMS.len()
    }

    pub fn layer(&self, l: usize) -> LayerVars {
        let v = &self.vars[4 + l * LAYER_PARAMS.len()..4 + (l + 1) * LAYER_PARAMS.len()];
        LayerVars {
            ln1_gain: v[0],
            ln1_bias: v[1],
            qkv: v[2],
            proj: v[3],
            ln2_gain: v[4],
            ln2_bias: v[5],
            fc1_w: v[6],
            fc1_b: v[7],
            fc2_w: v[8],
            fc2_b: v[9],
        }
    }

    fn tail(&self, back: usize) -> Var {
        self.vars[self.vars.len() - back]
    }

    pub fn final_ln(&self) -> (Var, Var) {
        (self.tail(4), self.tail(3))
    }

    pub fn head_token(&self) -> Var {
        self.tail(2)
    }

    pub fn head_dist(&self) -> Var {
        self.tail(1)
    }
}

/// Single-head attention: `[Q, K, V] = z·U`, `softmax(Q·Kᵀ/√D_k)·V`.
pub fn self_attention(tape: &mut Tape, z: Var, u_qkv: Var, d_k: usize) -> Result<Var, ModelError> {
    let width = tape.value(u_qkv).dims2().1;
    if width != 3 * d_k {
        return Err(ModelError::Contract(format!(
            "U_QKV has {width} columns, expected 3·{d_k}"
        )));
    }
    let qkv = tape.matmul(z, u_qkv)?;
    Ok(tape.attention(qkv, 1)?)
}

/// `Concat(SA_1(z), …, SA_h(z))·W` with a fused `[d × 3d]` projection.
pub fn multi_head_attention(tape: &mut Tape, z: Var, u_qkv: Var, w: Var, heads: usize) -> Result<Var, ModelError> {
    let qkv = tape.matmul(z, u_qkv)?;
    let heads_out = tape.attention(qkv, heads)?;
    Ok(tape.matmul(heads_out, w)?)
}

/// Pre-norm block: `z₁ = z + MSA(LN(z))`, `z' = z₁ + MLP(LN(z₁))`.
pub fn encoder_layer(tape: &mut Tape, z: Var, p: &LayerVars, cfg: &ModelConfig) -> Result<Var, ModelError> {
    let h = tape.layer_norm(z, p.ln1_gain, p.ln1_bias, cfg.ln_eps)?;
    let a = multi_head_attention(tape, h, p.qkv, p.proj, cfg.heads)?;
    let z1 = tape.add(z, a)?;
    let h = tape.layer_norm(z1, p.ln2_gain, p.ln2_bias, cfg.ln_eps)?;
    let h = tape.matmul(h, p.fc1_w)?;
    let h = tape.add_row(h, p.fc1_b)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, p.fc2_w)?;
    let h = tape.add_row(h, p.fc2_b)?;
    Ok(tape.add(z1, h)?)
}

/// Flattened patches of a spectrogram, checked against the model geometry.
pub fn patch_matrix(spec: &Spectrogram, cfg: &ModelConfig) -> Result<Tensor, ModelError> {
    if (spec.mel_bins, spec.frames) != (cfg.mel_bins, cfg.frames) {
        return Err(ModelError::Contract(format!(
            "spectrogram is {}×{}, model expects {}×{}",
            spec.mel_bins, spec.frames, cfg.mel_bins, cfg.frames
        )));
    }
    Ok(extract_patches(spec, &cfg.grid()?)?)
}

/// `[cls; dist; patches·E] + pos_embed`, shape `[(N+2) × d]`.
pub fn patchify_embed(tape: &mut Tape, patches: Var, p: &BoundParams) -> Result<Var, ModelError> {
    let rows = tape.value(patches).dims2().0;
    let expected = tape.value(p.pos_embed()).dims2().0;
    if rows + 2 != expected {
        return Err(ModelError::Contract(format!(
            "{rows} patches do not fit a positional table of {expected} rows"
        )));
    }
    let emb = tape.matmul(patches, p.patch_embed())?;
    let seq = tape.concat_rows(&[p.cls_token(), p.dist_token(), emb])?;
    Ok(tape.add(seq, p.pos_embed())?)
}

/// Head outputs recorded on a tape, each `[1 × m]`.
#[derive(Debug, Clone, Copy)]
pub struct LogitVars {
    pub token: Var,
    pub dist: Var,
}

/// Records the full network on `tape` for an `[N × 256]` patch matrix.
pub fn forward_tape(
    tape: &mut Tape,
    patches: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
) -> Result<LogitVars, ModelError> {
    if p.layer_count() != cfg.layers {
        return Err(ModelError::Contract(format!(
            "parameters have {} layers, config has {}",
            p.layer_count(),
            cfg.layers
        )));
    }
    let mut z = patchify_embed(tape, patches, p)?;
    for l in 0..cfg.layers {
        z = encoder_layer(tape, z, &p.layer(l), cfg)?;
    }
    let prefix = tape.rows(z, 0, 2)?;
    let (gain, bias) = p.final_ln();
    let y = tape.layer_norm(prefix, gain, bias, cfg.ln_eps)?;
    let y_cls = tape.rows(y, 0, 1)?;
    let y_dist = tape.rows(y, 1, 1)?;
    Ok(LogitVars {
        token: tape.matmul(y_cls, p.head_token())?,
        dist: tape.matmul(y_dist, p.head_dist())?,
    })
}

/// Logits of both heads and their average.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits_token: Vec<f64>,
    pub logits_dist: Vec<f64>,
    pub logits_final: Vec<f64>,
}

impl ForwardOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits_final)
    }

    pub fn predict(&self) -> ClassLabel {
        predict(&self.logits_final)
    }
}

/// Inference on a spectrogram with frozen parameters.
pub fn forward(spec: &Spectrogram, params: &ModelParams, cfg: &ModelConfig) -> Result<ForwardOutput, ModelError> {
    forward_patches(&patch_matrix(spec, cfg)?, params, cfg)
}

pub fn forward_patches(patches: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<ForwardOutput, ModelError> {
    params.check(cfg)?;
    let mut tape = Tape::new();
    let bound = BoundParams::frozen(&mut tape, params);
    let x = tape.constant(patches.clone());
    let out = forward_tape(&mut tape, x, &bound, cfg)?;
    let token = tape.value(out.token).data().to_vec();
    let dist = tape.value(out.dist).data().to_vec();
    let fin = token.iter().zip(&dist).map(|(a, b)| (a + b) / 2.0).collect();
    Ok(ForwardOutput {
        logits_token: token,
        logits_dist: dist,
        logits_final: fin,
    })
}

/// Argmax with ties resolved toward the lowest class index.
pub fn predict(logits: &[f64]) -> ClassLabel {
    let best = logits
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > logits[b] { i } else { b });
    ClassLabel::from_index(best).expect("logit index within class range")
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}
