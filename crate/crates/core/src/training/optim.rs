//! Adam and RMSProp over a [`ParamSet`], with per-parameter state slots.

use serde::{Deserialize, Serialize};
use sgan_tensor::{Element, Tensor};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_EPS: f64 = 1e-8;
pub const RMSPROP_RHO: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Adam { lr: f64, beta1: f64, beta2: f64 },
    #[serde(rename = "rmsprop")]
    RmsProp { lr: f64, rho: f64 },
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::RmsProp { lr, .. } => lr,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Adam { .. } => "adam",
            OptimizerConfig::RmsProp { .. } => "rmsprop",
        }
    }
}

/// Optimizer with one or two state tensors per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T: Element = f32> {
    pub config: OptimizerConfig,
    /// Completed update count (Adam bias correction uses `t + 1`).
    pub t: u64,
    /// First moment (Adam) per parameter slot.
    pub m: Vec<Option<Tensor<T>>>,
    /// Second moment (Adam) or squared-gradient average (RMSProp).
    pub v: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Optimizer<T> {
    pub fn new(config: OptimizerConfig, slots: usize) -> Self {
        Optimizer {
            config,
            t: 0,
            m: vec![None; slots],
            v: vec![None; slots],
        }
    }

    /// Apply one update. `grads` pairs parameter indices with gradients.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[(usize, Tensor<T>)]) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer has {} slots for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        for (idx, g) in grads {
            let p = &mut params[*idx];
            if p.frozen || !p.role.trainable() {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "gradient {:?} for {} {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            let shape = p.value.shape().to_vec();
            let v = self.v[*idx].get_or_insert_with(|| Tensor::zeros(&shape));
            match self.config {
                OptimizerConfig::Adam { lr, beta1, beta2 } => {
                    let m = self.m[*idx].get_or_insert_with(|| Tensor::zeros(&shape));
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.value.data_mut());
                    for i in 0..pd.len() {
                        let gi = g.data()[i].as_f64();
                        let mi = beta1 * md[i].as_f64() + (1.0 - beta1) * gi;
                        let vi = beta2 * vd[i].as_f64() + (1.0 - beta2) * gi * gi;
                        md[i] = T::from_f64(mi);
                        vd[i] = T::from_f64(vi);
                        let m_hat = mi / c1;
                        let v_hat = vi / c2;
                        let delta = lr * (m_hat / (v_hat.sqrt() + ADAM_EPS));
                        pd[i] = T::from_f64(pd[i].as_f64() - delta);
                    }
                }
                OptimizerConfig::RmsProp { lr, rho } => {
                    let (vd, pd) = (v.data_mut(), p.value.data_mut());
                    for i in 0..pd.len() {
                        let gi = g.data()[i].as_f64();
                        let vi = rho * vd[i].as_f64() + (1.0 - rho) * gi * gi;
                        vd[i] = T::from_f64(vi);
                        let delta = lr * (gi / (vi.sqrt() + RMSPROP_EPS));
                        pd[i] = T::from_f64(pd[i].as_f64() - delta);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Project every unfrozen trainable parameter into `[-c, c]`.
pub fn clip_weights<T: Element>(params: &mut ParamSet<T>, c: f64) {
    let (lo, hi) = (T::from_f64(-c), T::from_f64(c));
    for p in params.iter_mut() {
        if p.role.trainable() && !p.frozen {
            for v in p.value.data_mut() {
                *v = v.max(lo).min(hi);
            }
        }
    }
}
