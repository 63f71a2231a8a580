//! Central finite-difference gradients, used to check `mlp::backward`.
//!
//! The numeric gradient only calls `forward` and `nll_loss`, never the
//! backpropagation code it is compared against.

use crate::dropout::DropoutMask;
use crate::error::Result;
use crate::mlp::{forward, nll_loss, Gradients, NetworkParams};
use crate::tensor::Matrix;

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is (near) zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-8;

fn loss_at(
    params: &NetworkParams,
    input: &Matrix,
    labels: &[usize],
    mask: Option<&DropoutMask>,
) -> Result<f64> {
    nll_loss(&forward(params, input, mask)?.probabilities, labels)
}

/// `(L(w + h) - L(w - h)) / 2h` for every weight and bias.
pub fn numeric_gradients(
    params: &NetworkParams,
    input: &Matrix,
    labels: &[usize],
    mask: Option<&DropoutMask>,
    h: f64,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    let mut probe = params.clone();
    for l in 0..params.layers.len() {
        let n_w = params.layers[l].weights.data().len();
        for i in 0..n_w {
            let orig = params.layers[l].weights.data()[i];
            probe.layers[l].weights.data_mut()[i] = orig + h;
            let up = loss_at(&probe, input, labels, mask)?;
            probe.layers[l].weights.data_mut()[i] = orig - h;
            let down = loss_at(&probe, input, labels, mask)?;
            probe.layers[l].weights.data_mut()[i] = orig;
            grads.layers[l].weights.data_mut()[i] = (up - down) / (2.0 * h);
        }
        for j in 0..params.layers[l].biases.len() {
            let orig = params.layers[l].biases[j];
            probe.layers[l].biases[j] = orig + h;
            let up = loss_at(&probe, input, labels, mask)?;
            probe.layers[l].biases[j] = orig - h;
            let down = loss_at(&probe, input, labels, mask)?;
            probe.layers[l].biases[j] = orig;
            grads.layers[l].biases[j] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// `(layer, flat index)` of the worst coordinate, weights before biases.
    pub worst: (usize, usize),
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.errors.is_empty() {
            return 1.0;
        }
        self.errors.iter().filter(|&&e| e <= tol).count() as f64 / self.errors.len() as f64
    }
}

pub fn compare(analytic: &Gradients, numeric: &Gradients) -> GradCheckReport {
    let mut errors = Vec::new();
    let mut worst = (0, 0);
    let mut max = 0.0;
    for (l, (a, n)) in analytic.layers.iter().zip(&numeric.layers).enumerate() {
        for (i, (x, y)) in a.values().zip(n.values()).enumerate() {
            let e = relative_error(*x, *y);
            if e > max {
                max = e;
                worst = (l, i);
            }
            errors.push(e);
        }
    }
    GradCheckReport {
        coordinates: errors.len(),
        max_relative_error: max,
        worst,
        errors,
    }
}

/// Runs `backward` and the numeric gradient on the same batch and compares.
pub fn check(
    params: &NetworkParams,
    input: &Matrix,
    labels: &[usize],
    mask: Option<&DropoutMask>,
    h: f64,
) -> Result<GradCheckReport> {
    let pass = forward(params, input, mask)?;
    let analytic = crate::mlp::backward(params, &pass, labels, mask)?;
    let numeric = numeric_gradients(params, input, labels, mask, h)?;
    Ok(compare(&analytic, &numeric))
}
