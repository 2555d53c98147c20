//! Central finite differences over model parameters.

use super::model::{Gradients, MlpModel};
use crate::error::{param, shape, Error, Result};

/// Entries whose magnitude falls below this are compared absolutely.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

/// `(L(θ + ε e_k) − L(θ − ε e_k)) / 2ε` for every scalar parameter `k`.
pub fn finite_diff_gradient<F>(loss_fn: F, model: &MlpModel, epsilon: f64) -> Result<Gradients>
where
    F: Fn(&MlpModel) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(param(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut probe = model.clone();
    let mut flat = Vec::with_capacity(model.num_parameters());
    for k in 0..model.num_parameters() {
        let original = *probe.parameter_mut(k);
        *probe.parameter_mut(k) = original + epsilon;
        let plus = loss_fn(&probe)?;
        *probe.parameter_mut(k) = original - epsilon;
        let minus = loss_fn(&probe)?;
        *probe.parameter_mut(k) = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is not finite when perturbing parameter {k}"
            )));
        }
        flat.push((plus - minus) / (2.0 * epsilon));
    }
    let mut grads = Gradients::zeros_like(model);
    let mut it = flat.into_iter();
    for layer in &mut grads.layers {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = it.next().expect("one value per parameter");
        }
    }
    Ok(grads)
}

/// Largest elementwise discrepancy: relative where either entry is at least
/// [`ABSOLUTE_FLOOR`] in magnitude, absolute otherwise.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> Result<f64> {
    let a = analytic.to_flat();
    let b = numeric.to_flat();
    if a.len() != b.len() {
        return Err(shape("gradient blocks do not match"));
    }
    Ok(a.iter().zip(&b).fold(0.0, |worst, (&x, &y)| {
        let scale = x.abs().max(y.abs());
        let err = if scale < ABSOLUTE_FLOOR {
            (x - y).abs()
        } else {
            (x - y).abs() / scale
        };
        worst.max(err)
    }))
}
