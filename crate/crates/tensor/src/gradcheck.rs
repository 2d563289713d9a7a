//! Central finite-difference gradient checks in `f64`.
//!
//! The numeric side only evaluates the function forward, so it stays
//! independent of the backward rules it verifies.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error between analytic and numeric gradients, one entry per input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Compare `d f / d inputs` from the tape against central differences with step `h`.
///
/// `f` must return a scalar. It may itself call [`Tape::grad`] with
/// `create_graph`, which turns this into a second-order check.
pub fn check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss, &vars)?
    };

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = vals.iter().map(|t| tape.param(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut vals = inputs.to_vec();
            vals[i].data_mut()[j] = input.data()[j] + h;
            let up = eval(&vals)?;
            vals[i].data_mut()[j] = input.data()[j] - h;
            let down = eval(&vals)?;
            *slot = (up - down) / (2.0 * h);
        }
        relative_errors.push(relative_error(analytic[i].data(), &numeric));
    }
    Ok(GradCheck { relative_errors })
}
