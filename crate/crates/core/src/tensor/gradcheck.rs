//! Central finite-difference gradient oracle.

use super::{Tape, Tensor, TensorError, Var};

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest coordinatewise [`relative_error`] and where it occurs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0.0, 0), |(best, at), (i, e)| if e > best { (e, i) } else { (best, at) })
}

/// Central-difference gradient of a scalar function.
///
/// `f` is evaluated twice at `x` first; differing values mean the oracle
/// cannot be trusted and yield [`TensorError::OracleInvalid`].
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor, TensorError>
where
    F: FnMut(&Tensor) -> Result<f64, TensorError>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(TensorError::OracleInvalid(format!("step {h} must be positive")));
    }
    let first = f(x)?;
    let second = f(x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::OracleInvalid(format!(
            "function is not deterministic: {first} then {second}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Checks the tape's gradient of `f` at `x` against central differences.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// one-element loss recorded on that tape.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let loss = f(&mut tape, leaf)?;
    let analytic = tape
        .backward(loss)?
        .take(leaf)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let evaluate = |probe: &Tensor| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let leaf = tape.constant(probe.clone());
        let loss = f(&mut tape, leaf)?;
        tape.value(loss)
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss {
                shape: tape.value(loss).shape().to_vec(),
            })
    };
    let numeric = numeric_gradient(evaluate, x, h)?;
    let (max_rel_error, worst_index) = max_relative_error(analytic.data(), numeric.data());
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
