use std::borrow::Cow;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::derive_seed;
use crate::dataset::{ClassLabel, SplitSpec};
use crate::features::NormStats;
use crate::metrics::{score, sensitivity, specificity, uar_and_macro_precision, ConfusionMatrix};
use crate::model::{forward_patches, instance_loss, BoundParams, ModelConfig, ModelParams};
use crate::tensor::{Tape, Tensor};

use super::{BestRecord, EpochRecord, Instance, Pipeline, RunState, TrainConfig, TrainError, STREAM_ORDER};

/// Patch matrices kept in memory across epochs are capped at this many bytes.
const CACHE_BUDGET_BYTES: usize = 768 << 20;

/// One training example tagged with its patient.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub patches: &'a Tensor,
    pub label: ClassLabel,
    pub patient: u32,
}

/// Inverse class frequency `n / (4·n_c)`; absent classes get weight 0.
pub fn class_weights(labels: impl IntoIterator<Item = ClassLabel>) -> [f64; 4] {
    let mut counts = [0usize; 4];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n: usize = counts.iter().sum();
    counts.map(|c| if c == 0 { 0.0 } else { n as f64 / (4.0 * c as f64) })
}

/// Permutation of `0..n` used to batch epoch `epoch` (1-based).
pub fn epoch_order(n: usize, global_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(global_seed, &[STREAM_ORDER, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

/// Mean two-head loss over the batch and its gradient for every tensor.
///
/// Each sample runs on its own tape (possibly in parallel); per-sample
/// gradients are then summed in batch order, so the result does not depend
/// on thread scheduling.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &[BatchItem<'_>],
    cfg: &ModelConfig,
    weights: Option<&[f64; 4]>,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Contract("a batch needs at least one sample".into()));
    }
    let per_sample = batch
        .par_iter()
        .map(|item| -> Result<(f64, Vec<Vec<f64>>), TrainError> {
            let mut tape = Tape::new();
            let bound = BoundParams::trainable(&mut tape, params);
            let mut loss = instance_loss(&mut tape, &bound, item.patches, item.label.index(), cfg)?;
            if let Some(w) = weights {
                loss = tape.scale(loss, w[item.label.index()]);
            }
            let grads = tape.backward(loss)?;
            let flat = bound
                .vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], |g| g.data().to_vec()))
                .collect();
            Ok((tape.value(loss).data()[0], flat))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut sum: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
    for (loss, grads) in &per_sample {
        total += loss;
        for (acc, g) in sum.iter_mut().zip(grads) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    for v in sum.iter_mut().flatten() {
        *v *= scale;
    }
    Ok((total * scale, sum))
}

/// One optimizer update on `state.params`. Returns the batch loss.
pub fn train_step(
    state: &mut RunState,
    batch: &[BatchItem<'_>],
    cfg: &TrainConfig,
    weights: Option<&[f64; 4]>,
    batch_index: usize,
) -> Result<f64, TrainError> {
    let (loss, grads) = batch_loss_and_grads(&state.params, batch, &state.model, weights)?;
    ensure_finite(loss, &grads, state.epoch + 1, batch_index)?;
    state
        .optimizer
        .apply(state.params.tensors_mut(), &grads, cfg.learning_rate, cfg.weight_decay);
    Ok(loss)
}

/// Non-finite loss or gradient diagnostic. `max_grad` is NaN when any
/// gradient is NaN.
fn ensure_finite(loss: f64, grads: &[Vec<f64>], epoch: usize, batch: usize) -> Result<(), TrainError> {
    if loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite()) {
        return Ok(());
    }
    let max_grad = grads
        .iter()
        .flatten()
        .fold(0.0f64, |m, g| if g.is_nan() || m.is_nan() { f64::NAN } else { m.max(g.abs()) });
    Err(TrainError::NonFinite { epoch, batch, max_grad })
}

/// Splits instances by the patient partition. Every instance's patient must
/// be on exactly one side.
pub fn partition_instances<'a>(
    instances: &'a [Instance],
    split: &SplitSpec,
) -> Result<(Vec<&'a Instance>, Vec<&'a Instance>), TrainError> {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for inst in instances {
        match (split.is_train(inst.patient), split.is_eval(inst.patient)) {
            (true, false) => train.push(inst),
            (false, true) => eval.push(inst),
            (true, true) => return Err(TrainError::SubjectLeak { patient: inst.patient }),
            (false, false) => {
                return Err(TrainError::Contract(format!(
                    "patient {} of instance {} is in neither side of the split",
                    inst.patient, inst.id
                )))
            }
        }
    }
    train.sort_by_key(|i| i.id);
    eval.sort_by_key(|i| i.id);
    Ok((train, eval))
}

fn check_subjects(batch: &[BatchItem<'_>], split: &SplitSpec) -> Result<(), TrainError> {
    match batch.iter().find(|b| split.is_eval(b.patient)) {
        Some(b) => Err(TrainError::SubjectLeak { patient: b.patient }),
        None => Ok(()),
    }
}

/// Predictions on precomputed patch matrices.
pub fn evaluate_patches<'a>(
    items: impl IntoParallelIterator<Item = (&'a Tensor, ClassLabel)>,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ConfusionMatrix, TrainError> {
    let pairs = items
        .into_par_iter()
        .map(|(patches, truth)| Ok((truth, forward_patches(patches, params, cfg)?.predict())))
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(ConfusionMatrix::from_pairs(&pairs))
}

/// Fixed-start predictions for every instance, one per cycle.
pub fn evaluate(pipeline: &Pipeline, instances: &[&Instance], params: &ModelParams) -> Result<ConfusionMatrix, TrainError> {
    let pairs = instances
        .par_iter()
        .map(|inst| {
            let patches = pipeline.eval_patches(inst)?;
            Ok((inst.label, forward_patches(&patches, params, pipeline.model_config())?.predict()))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(ConfusionMatrix::from_pairs(&pairs))
}

/// Epoch driver over one split of a dataset.
pub struct Trainer<'a> {
    pipeline: &'a Pipeline,
    cfg: TrainConfig,
    split: &'a SplitSpec,
    train: Vec<&'a Instance>,
    eval: Vec<&'a Instance>,
    eval_cache: Option<Vec<Tensor>>,
    train_cache: Vec<Option<Tensor>>,
    weights: Option<[f64; 4]>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        pipeline: &'a Pipeline,
        instances: &'a [Instance],
        split: &'a SplitSpec,
        cfg: TrainConfig,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if pipeline.stats().is_none() {
            return Err(TrainError::Contract("pipeline has no normalization statistics".into()));
        }
        let (train, eval) = partition_instances(instances, split)?;
        if train.is_empty() {
            return Err(TrainError::Contract("the training split has no instances".into()));
        }
        let patch_bytes = {
            let m = pipeline.model_config();
            m.n_patches()? * m.patch * m.patch * 8
        };
        let mut budget = CACHE_BUDGET_BYTES / patch_bytes.max(1);

        let eval_cache = if eval.len() <= budget {
            budget -= eval.len();
            Some(
                eval.par_iter()
                    .map(|inst| pipeline.eval_patches(inst))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let train_cache = train
            .par_iter()
            .enumerate()
            .map(|(i, inst)| {
                if i < budget && pipeline.crop_is_fixed(inst) {
                    pipeline.train_patches(inst, cfg.global_seed, 0).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let weights = cfg.class_weights.then(|| class_weights(train.iter().map(|i| i.label)));
        info!(
            "trainer: {} training and {} evaluation instances, {} cached",
            train.len(),
            eval.len(),
            train_cache.iter().filter(|c| c.is_some()).count() + eval_cache.as_ref().map_or(0, Vec::len)
        );
        Ok(Self {
            pipeline,
            cfg,
            split,
            train,
            eval,
            eval_cache,
            train_cache,
            weights,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn train_instances(&self) -> &[&'a Instance] {
        &self.train
    }

    pub fn eval_instances(&self) -> &[&'a Instance] {
        &self.eval
    }

    /// A fresh state with the given initial parameters.
    pub fn initial_state(&self, params: ModelParams) -> Result<RunState, TrainError> {
        params.check(self.pipeline.model_config())?;
        Ok(RunState::new(
            self.pipeline.model_config().clone(),
            params,
            self.cfg.optimizer,
            self.cfg.global_seed,
        ))
    }

    fn train_patches(&self, i: usize, epoch: usize) -> Result<Cow<'_, Tensor>, TrainError> {
        match &self.train_cache[i] {
            Some(t) => Ok(Cow::Borrowed(t)),
            None => Ok(Cow::Owned(self.pipeline.train_patches(self.train[i], self.cfg.global_seed, epoch)?)),
        }
    }

    pub fn evaluate(&self, params: &ModelParams) -> Result<ConfusionMatrix, TrainError> {
        match &self.eval_cache {
            Some(cache) => evaluate_patches(
                cache.par_iter().zip(self.eval.par_iter().map(|i| i.label)),
                params,
                self.pipeline.model_config(),
            ),
            None => evaluate(self.pipeline, &self.eval, params),
        }
    }

    fn is_eval_epoch(&self, epoch: usize) -> bool {
        epoch == self.cfg.epochs || (self.cfg.eval_every > 0 && epoch % self.cfg.eval_every == 0)
    }

    /// Runs the next epoch and appends its history row.
    pub fn run_epoch(&self, state: &mut RunState) -> Result<EpochRecord, TrainError> {
        if state.model != *self.pipeline.model_config() || state.global_seed != self.cfg.global_seed {
            return Err(TrainError::State("run state belongs to a different model or seed".into()));
        }
        let epoch = state.epoch + 1;
        let order = epoch_order(self.train.len(), self.cfg.global_seed, epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let patches = chunk
                .par_iter()
                .map(|&i| self.train_patches(i, epoch))
                .collect::<Result<Vec<_>, _>>()?;
            let batch: Vec<BatchItem<'_>> = chunk
                .iter()
                .zip(&patches)
                .map(|(&i, p)| BatchItem {
                    patches: p.as_ref(),
                    label: self.train[i].label,
                    patient: self.train[i].patient,
                })
                .collect();
            check_subjects(&batch, self.split)?;
            let loss = train_step(state, &batch, &self.cfg, self.weights.as_ref(), b)?;
            debug!("epoch {epoch} batch {b}: loss {loss:.6}");
            loss_sum += loss;
            batches += 1;
        }
        let mut record = EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            sensitivity: None,
            specificity: None,
            score: None,
            uar: None,
        };
        if self.is_eval_epoch(epoch) && !self.eval.is_empty() {
            let cm = self.evaluate(&state.params)?;
            record.sensitivity = sensitivity(&cm).ok();
            record.specificity = specificity(&cm).ok();
            record.score = score(&cm).ok();
            record.uar = uar_and_macro_precision(&cm).ok().map(|s| s.uar);
        }
        if let Some(s) = record.score {
            if state.best.map_or(true, |b| s > b.score) {
                state.best = Some(BestRecord { epoch, score: s });
                state.best_params = state.params.clone();
            }
        }
        state.epoch = epoch;
        state.history.push(record.clone());
        info!(
            "epoch {epoch}: loss {:.5} score {} uar {}",
            record.loss,
            record.score.map_or("-".into(), |v| format!("{v:.4}")),
            record.uar.map_or("-".into(), |v| format!("{v:.4}"))
        );
        Ok(record)
    }

    /// Continues `state` until the configured epoch count, calling
    /// `on_epoch` after each one.
    pub fn run(
        &self,
        state: &mut RunState,
        mut on_epoch: impl FnMut(&RunState, &EpochRecord) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        while state.epoch < self.cfg.epochs {
            let record = self.run_epoch(state)?;
            on_epoch(state, &record)?;
        }
        Ok(())
    }
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best evaluation Score, or the final ones when no
    /// epoch produced a defined Score.
    pub best_params: ModelParams,
    pub last_params: ModelParams,
    pub best: Option<BestRecord>,
    pub history: Vec<EpochRecord>,
    pub stats: NormStats,
}

/// Fits normalization statistics on the training side when the pipeline has
/// none, initializes parameters from the global seed and trains.
pub fn train(
    instances: &[Instance],
    split: &SplitSpec,
    pipeline: Pipeline,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let pipeline = match pipeline.stats() {
        Some(_) => pipeline,
        None => {
            let (train_side, _) = partition_instances(instances, split)?;
            let stats = pipeline.fit_stats(train_side)?;
            pipeline.with_stats(stats)
        }
    };
    let trainer = Trainer::new(&pipeline, instances, split, cfg.clone())?;
    let params = ModelParams::init(pipeline.model_config(), cfg.global_seed)?;
    let mut state = trainer.initial_state(params)?;
    trainer.run(&mut state, |_, _| Ok(()))?;
    let best_params = if state.best.is_some() {
        state.best_params.clone()
    } else {
        state.params.clone()
    };
    Ok(TrainOutcome {
        best_params,
        last_params: state.params,
        best: state.best,
        history: state.history,
        stats: pipeline.stats().cloned().expect("stats were fitted above"),
    })
}
