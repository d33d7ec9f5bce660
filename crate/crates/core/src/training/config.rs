use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub global_seed: u64,
    /// Evaluate every this many epochs (0 disables periodic evaluation;
    /// the final epoch is always evaluated).
    pub eval_every: usize,
    /// Weight each instance's loss by the inverse frequency of its class in
    /// the training split.
    pub class_weights: bool,
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            batch_size: 8,
            epochs: 50,
            learning_rate: 3e-4,
            optimizer: OptimizerKind::default(),
            weight_decay: 0.0,
            global_seed: 0,
            eval_every: 1,
            class_weights: false,
        }
    }

    pub fn full() -> Self {
        Self {
            batch_size: 32,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be a finite non-negative number",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config("weight_decay must be non-negative".into()));
        }
        match self.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return Err(TrainError::Config("adam needs 0 <= beta < 1 and eps > 0".into()));
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(TrainError::Config("momentum must lie in [0, 1)".into()));
                }
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}
