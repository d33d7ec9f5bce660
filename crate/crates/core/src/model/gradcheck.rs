use crate::tensor::{max_relative_error, numeric_gradient, Tape, Tensor, TensorError};

use super::{forward_tape, BoundParams, ModelConfig, ModelError, ModelParams};

/// Finite-difference comparison for one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Two-head training loss `CE(token) + CE(dist)` for one instance.
pub fn instance_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    patches: &Tensor,
    label: usize,
    cfg: &ModelConfig,
) -> Result<crate::tensor::Var, ModelError> {
    let x = tape.constant(patches.clone());
    let out = forward_tape(tape, x, bound, cfg)?;
    let a = tape.cross_entropy(out.token, &[label])?;
    let b = tape.cross_entropy(out.dist, &[label])?;
    Ok(tape.add(a, b)?)
}

/// Compares the tape gradient of the two-head loss against central
/// differences with step `h`, for every parameter tensor.
pub fn check_parameter_gradients(
    cfg: &ModelConfig,
    params: &ModelParams,
    patches: &Tensor,
    label: usize,
    h: f64,
) -> Result<Vec<ParamCheck>, ModelError> {
    let mut tape = Tape::new();
    let bound = BoundParams::trainable(&mut tape, params);
    let loss = instance_loss(&mut tape, &bound, patches, label, cfg)?;
    let grads = tape.backward(loss)?;

    let mut out = Vec::with_capacity(params.len());
    for (i, name) in params.names().iter().enumerate() {
        let analytic = grads
            .get(bound.vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.tensors()[i].shape().to_vec()));
        let eval = |probe: &Tensor| -> Result<f64, TensorError> {
            let mut p = params.clone();
            p.tensors_mut()[i] = probe.clone();
            let mut tape = Tape::new();
            let bound = BoundParams::frozen(&mut tape, &p);
            let loss = instance_loss(&mut tape, &bound, patches, label, cfg)
                .map_err(|e| TensorError::OracleInvalid(e.to_string()))?;
            Ok(tape.value(loss).data()[0])
        };
        let numeric = numeric_gradient(eval, &params.tensors()[i], h)?;
        let (max_rel_error, worst_index) = max_relative_error(analytic.data(), numeric.data());
        out.push(ParamCheck {
            name: name.clone(),
            max_rel_error,
            worst_index,
            analytic: analytic.data()[worst_index],
            numeric: numeric.data()[worst_index],
        });
    }
    Ok(out)
}
