//! Composite layer primitives built from tape operations.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T: Element> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }

    /// `r <- (1 - momentum) r + momentum * batch`, using the unbiased batch variance.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: f64) {
        let m = T::from_f64(momentum);
        let keep = T::one() - m;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(batch.mean.data()) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(batch.unbiased_var.data()) {
            *r = keep * *r + m * b;
        }
    }
}

/// Statistics of one training batch, per channel.
#[derive(Clone, Debug)]
pub struct BatchStats<T: Element> {
    pub mean: Tensor<T>,
    pub unbiased_var: Tensor<T>,
}

pub enum NormMode<'a, T: Element> {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval(&'a RunningStats<T>),
}

/// Add a per-channel bias `[C]` to an NCHW tensor.
pub fn add_channel_bias<'t, T: Element>(x: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    x.add(bias.expand_axis(1, &shape)?)
}

/// Multiply an NCHW tensor by a per-channel scale `[C]`.
pub fn mul_channel<'t, T: Element>(x: Var<'t, T>, scale: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    x.mul(scale.expand_axis(1, &shape)?)
}

/// Batch normalization over `(N, H, W)` for each channel, followed by `gamma * x + beta`.
///
/// In training mode the batch statistics are returned so the caller can
/// fold them into its running statistics.
pub fn batch_norm2d<'t, T: Element>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    mode: NormMode<'_, T>,
) -> Result<(Var<'t, T>, Option<BatchStats<T>>)> {
    let shape = x.shape();
    let [n, c, h, w] = shape[..] else {
        return Err(TensorError::shape("batch_norm2d", "rank-4 NCHW tensor", &shape));
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape("batch_norm2d", format!("affine of [{c}]"), &gamma.shape()));
    }
    let tape = x.tape();
    match mode {
        NormMode::Train => {
            if n < 2 {
                return Err(TensorError::invalid(
                    "batch_norm2d",
                    "training mode needs a batch of at least 2",
                ));
            }
            let count = (n * h * w) as f64;
            let mean = x.sum_to_axis(1)?.scale(1.0 / count);
            let centered = x.sub(mean.expand_axis(1, &shape)?)?;
            let var = centered.square().sum_to_axis(1)?.scale(1.0 / count);
            let inv_std = tape
                .constant(Tensor::ones(&[c]))
                .div(var.add_scalar(BN_EPS).sqrt())?;
            let normalized = mul_channel(centered, inv_std)?;
            let out = add_channel_bias(mul_channel(normalized, gamma)?, beta)?;
            let correction = T::from_f64(count / (count - 1.0));
            let stats = BatchStats {
                mean: mean.value(),
                unbiased_var: var.value().map(|v| v * correction),
            };
            Ok((out, Some(stats)))
        }
        NormMode::Eval(running) => {
            let eps = T::from_f64(BN_EPS);
            let inv_std = running.var.map(|v| T::one() / (v + eps).sqrt());
            let shift = running
                .mean
                .zip_map(&inv_std, "batch_norm2d", |m, s| -m * s)?;
            let scale = tape.constant(inv_std);
            let shift = tape.constant(shift);
            let normalized = add_channel_bias(mul_channel(x, scale)?, shift)?;
            Ok((add_channel_bias(mul_channel(normalized, gamma)?, beta)?, None))
        }
    }
}

/// Multiply each sample of a batch by its own scalar.
pub fn mul_per_sample<'t, T: Element>(x: Var<'t, T>, scale: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    x.mul(scale.expand_axis(0, &shape)?)
}
