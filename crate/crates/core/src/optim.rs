//! SGD with momentum and per-group learning rates.

use serde::{Deserialize, Serialize};

use crate::autodiff::GradientMap;
use crate::error::{Error, Result};
use crate::nn::ModelBundle;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Head groups step with `learning_rate × head_lr_multiplier`.
    pub head_lr_multiplier: f64,
    pub momentum: f64,
    /// Rescale the whole gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.03,
            head_lr_multiplier: 10.0,
            momentum: 0.95,
            clip_norm: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if !(self.head_lr_multiplier > 0.0 && self.head_lr_multiplier.is_finite()) {
            return Err(Error::config("train.head_lr_multiplier", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("train.clip_norm", "must be positive"));
            }
        }
        Ok(())
    }
}

/// One velocity buffer per parameter, in [`ModelBundle::named_params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub Vec<Tensor>);

impl Velocity {
    pub fn zeros(bundle: &ModelBundle) -> Self {
        Velocity(
            bundle
                .named_params()
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect(),
        )
    }
}

/// `v ← μ·v + g; p ← p − lr·v` for every parameter, with `lr` scaled by the
/// head multiplier for head groups. Clipping, when enabled, rescales `grads`
/// in place before the update.
pub fn sgd_momentum_step(
    bundle: &mut ModelBundle,
    grads: &mut GradientMap,
    velocity: &mut Velocity,
    cfg: &SgdConfig,
) -> Result<()> {
    if let Some(max) = cfg.clip_norm {
        grads.clip_global_norm(max);
    }
    let meta: Vec<(String, bool)> = bundle
        .named_params()
        .into_iter()
        .map(|(name, group, _)| (name, group.is_head()))
        .collect();
    if velocity.0.len() != meta.len() {
        return Err(Error::Shape(format!(
            "velocity has {} buffers for {} parameters",
            velocity.0.len(),
            meta.len()
        )));
    }
    for (((name, is_head), param), v) in meta.iter().zip(bundle.params_mut()).zip(&mut velocity.0) {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Shape(format!("no gradient for parameter {name}")))?;
        if g.shape() != param.shape() || v.shape() != param.shape() {
            return Err(Error::Shape(format!(
                "{name}: parameter {:?}, gradient {:?}, velocity {:?}",
                param.shape(),
                g.shape(),
                v.shape()
            )));
        }
        let lr = if *is_head {
            cfg.learning_rate * cfg.head_lr_multiplier
        } else {
            cfg.learning_rate
        };
        for ((p, vi), &gi) in param.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi + gi;
            *p -= lr * *vi;
        }
    }
    Ok(())
}
