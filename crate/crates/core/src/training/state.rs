use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::model::{ModelConfig, ModelParams};

use super::{OptimizerKind, OptimizerState, TrainError};

const MAGIC: &[u8; 8] = b"ASVITRUN";
const FORMAT_VERSION: u32 = 1;

/// One row of the metric history. Metrics are `None` for epochs that were
/// not evaluated or where the metric is undefined on the evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub score: Option<f64>,
    pub uar: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub score: f64,
}

/// Everything needed to continue training bit-identically.
///
/// The data-order and crop generators are pure functions of
/// `(global_seed, epoch, instance)`, so the epoch counter fully determines
/// their position.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub model: ModelConfig,
    pub global_seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestRecord>,
    pub best_params: ModelParams,
}

impl RunState {
    pub fn new(model: ModelConfig, params: ModelParams, kind: OptimizerKind, global_seed: u64) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
        Self {
            model,
            global_seed,
            epoch: 0,
            optimizer: OptimizerState::new(kind, &sizes),
            history: Vec::new(),
            best: None,
            best_params: params.clone(),
            params,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    format_version: u32,
    model: ModelConfig,
    global_seed: u64,
    epoch: usize,
    optimizer: OptimizerKind,
    step: u64,
    history: Vec<EpochRecord>,
    best: Option<BestRecord>,
    params_bytes: u64,
    best_bytes: u64,
    first_len: u64,
    second_len: u64,
}

fn flat(buffers: &[Vec<f64>]) -> Vec<u8> {
    buffers.iter().flatten().flat_map(|v| v.to_le_bytes()).collect()
}

fn unflat(bytes: &[u8], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    sizes.iter().map(|&n| values.by_ref().take(n).collect()).collect()
}

pub fn encode_run_state(state: &RunState) -> Result<Vec<u8>, TrainError> {
    let params = encode_checkpoint(&state.params, &state.model, &serde_json::Value::Null)?;
    let best = encode_checkpoint(&state.best_params, &state.model, &serde_json::Value::Null)?;
    let first = flat(&state.optimizer.first);
    let second = flat(&state.optimizer.second);
    let header = StateHeader {
        format_version: FORMAT_VERSION,
        model: state.model.clone(),
        global_seed: state.global_seed,
        epoch: state.epoch,
        optimizer: state.optimizer.kind,
        step: state.optimizer.step,
        history: state.history.clone(),
        best: state.best,
        params_bytes: params.len() as u64,
        best_bytes: best.len() as u64,
        first_len: first.len() as u64,
        second_len: second.len() as u64,
    };
    let json = serde_json::to_vec(&header).map_err(|e| TrainError::State(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + params.len() + best.len() + first.len() + second.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for part in [params, best, first, second] {
        out.extend_from_slice(&part);
    }
    Ok(out)
}

pub fn decode_run_state(bytes: &[u8]) -> Result<RunState, TrainError> {
    let bad = |m: &str| TrainError::State(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a run state file"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + header_len).ok_or_else(|| bad("truncated header"))?;
    let header: StateHeader = serde_json::from_slice(json).map_err(|e| TrainError::State(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(TrainError::State(format!("unsupported format version {}", header.format_version)));
    }
    let mut at = 16 + header_len;
    let mut take = |n: u64| -> Result<&[u8], TrainError> {
        let part = bytes.get(at..at + n as usize).ok_or_else(|| bad("truncated payload"))?;
        at += n as usize;
        Ok(part)
    };
    let params = decode_checkpoint(take(header.params_bytes)?)?.params;
    let best_params = decode_checkpoint(take(header.best_bytes)?)?.params;
    params.check(&header.model)?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let first = take(header.first_len)?;
    let second = take(header.second_len)?;
    let expected_second = match header.optimizer {
        OptimizerKind::Adam { .. } => total * 8,
        OptimizerKind::SgdMomentum { .. } => 0,
    };
    if first.len() != total * 8 || second.len() != expected_second {
        return Err(bad("optimizer moments do not match the parameter sizes"));
    }
    let optimizer = OptimizerState {
        kind: header.optimizer,
        step: header.step,
        first: unflat(first, &sizes),
        second: if second.is_empty() { Vec::new() } else { unflat(second, &sizes) },
    };
    Ok(RunState {
        model: header.model,
        global_seed: header.global_seed,
        epoch: header.epoch,
        params,
        optimizer,
        history: header.history,
        best: header.best,
        best_params,
    })
}

pub fn save_run_state(path: &Path, state: &RunState) -> Result<(), TrainError> {
    let bytes = encode_run_state(state)?;
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|source| TrainError::Io {
        path: tmp.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_run_state(path: &Path) -> Result<RunState, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_run_state(&bytes)
}
