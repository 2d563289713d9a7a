use serde::{Deserialize, Serialize};

use super::augment::Categories;
use super::optim::{OptimizerConfig, RMSPROP_RHO};
use crate::error::{Error, Result};
use crate::nn::Init;
use crate::zoo::Arch;

pub const L1_WEIGHT: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub initial_p: f64,
    pub categories: Categories,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            initial_p: 0.0,
            categories: Categories::ALL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub optimizer: OptimizerConfig,
    /// Weight clipping bound (WGAN).
    pub clip: Option<f64>,
    /// Critic updates per generator update.
    pub n_critic: u64,
    /// Gradient-penalty weight (WGAN-GP).
    pub gp_lambda: Option<f64>,
    /// Reconstruction weight (translator).
    pub l1_weight: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub conditional: bool,
    pub init: Init,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Hyperparameters of the reference settings for each architecture.
    pub fn preset(arch: Arch) -> Self {
        let base = TrainConfig {
            arch,
            optimizer: OptimizerConfig::Adam {
                lr: 0.0002,
                beta1: 0.5,
                beta2: 0.999,
            },
            clip: None,
            n_critic: 1,
            gp_lambda: None,
            l1_weight: L1_WEIGHT,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            augment: AugmentConfig::default(),
            conditional: false,
            init: Init::Uniform,
            checkpoint_every: 0,
        };
        match arch {
            Arch::Dcgan => base,
            Arch::Wgan => TrainConfig {
                optimizer: OptimizerConfig::RmsProp {
                    lr: 0.00005,
                    rho: RMSPROP_RHO,
                },
                clip: Some(0.01),
                n_critic: 5,
                ..base
            },
            Arch::WganGp => TrainConfig {
                optimizer: OptimizerConfig::Adam {
                    lr: 0.0002,
                    beta1: 0.0,
                    beta2: 0.9,
                },
                gp_lambda: Some(10.0),
                n_critic: 5,
                ..base
            },
            // pix2pix-style settings; batch must be at least 2 for batch norm
            Arch::Translator => TrainConfig {
                batch_size: 4,
                epochs: 20,
                ..base
            },
        }
    }

    /// Optimizer and initializer settings listed for the large-scale conditional
    /// model, run with the DCGAN loop. Whether its 70 epochs count the merged or
    /// the per-class set is not stated; an epoch here is one pass over whatever
    /// set is loaded.
    pub fn biggan_deep_preset() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 70,
            init: Init::Orthogonal,
            conditional: true,
            ..Self::preset(Arch::Dcgan)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 (batch norm)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be positive".into()));
        }
        if self.optimizer.lr() <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let Some(c) = self.clip {
            if c <= 0.0 {
                return Err(Error::Config("clip bound must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.augment.initial_p) {
            return Err(Error::Config("augmentation p must lie in [0, 1)".into()));
        }
        Ok(())
    }
}
