use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::OptimizerKind;

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    /// Unused (empty) for SGD.
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            kind,
            step: 0,
            first: zeros(),
            second: match kind {
                OptimizerKind::Adam { .. } => zeros(),
                OptimizerKind::SgdMomentum { .. } => Vec::new(),
            },
        }
    }

    /// One update of every tensor in place. L2 weight decay is added to the
    /// gradient before the moment updates.
    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64, weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let data = p.data_mut();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..data.len() {
                        let gj = g[j] + weight_decay * data[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    let vel = &mut self.first[i];
                    for j in 0..data.len() {
                        let gj = g[j] + weight_decay * data[j];
                        vel[j] = momentum * vel[j] + gj;
                        data[j] -= lr * vel[j];
                    }
                }
            }
        }
    }
}
