//! Losses, optimizers, augmentation and the per-architecture training loops.

pub mod augment;
pub mod config;
pub mod losses;
pub mod optim;
pub mod trainer;

use serde::{Deserialize, Serialize};
use sgan_tensor::{Element, Rng, Tensor};

use crate::error::{Error, Result};
use crate::zoo::{GanPair, LATENT_DIM};

pub use augment::{AugmentPlan, AugmentState, Categories};
pub use config::{AugmentConfig, TrainConfig};
pub use optim::{clip_weights, Optimizer, OptimizerConfig};
pub use trainer::{Dataset, MetricRecord, TrainState, Trainer};

/// Progress counters, stored in checkpoints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Completed steps (one batch each).
    pub step: u64,
    pub epoch: u64,
    /// Batches already consumed in the current epoch.
    pub batch_in_epoch: u64,
    pub critic_updates: u64,
    pub generator_updates: u64,
}

/// `psi * z`; `psi = 1` returns `z` unchanged.
pub fn truncate_latent<T: Element>(z: &Tensor<T>, psi: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::Invalid(format!("truncation {psi} outside [0, 1]")));
    }
    if psi == 1.0 {
        return Ok(z.clone());
    }
    let s = T::from_f64(psi);
    Ok(z.map(|v| v * s))
}

/// `n` standard-normal latents shaped `[n, LATENT_DIM, 1, 1]`.
pub fn sample_latent<T: Element>(rng: &mut Rng, n: usize) -> Tensor<T> {
    rng.normal_tensor(&[n, LATENT_DIM, 1, 1])
}

/// Generate images from explicit latents in inference mode, rejecting non-finite pixels.
pub fn generate<T: Element>(pair: &GanPair<T>, z: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
    let labels = if pair.options.conditional {
        Some(labels.ok_or_else(|| Error::Invalid("conditional model needs class labels".into()))?)
    } else {
        None
    };
    let out = pair.generator.infer(z, labels)?;
    if !out.is_finite() {
        return Err(Error::NonFiniteOutput(format!("{} generator", pair.options.arch)));
    }
    Ok(out)
}

/// Draw `n` latents from `seed`, truncate by `psi`, and generate.
pub fn sample_images<T: Element>(
    pair: &GanPair<T>,
    n: usize,
    seed: u64,
    psi: f64,
    labels: Option<&[usize]>,
) -> Result<Tensor<T>> {
    let z = truncate_latent(&sample_latent(&mut Rng::new(seed), n), psi)?;
    generate(pair, &z, labels)
}
