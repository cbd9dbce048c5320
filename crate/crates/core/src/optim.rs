//! Momentum SGD with L2 weight decay on weight matrices.
//!
//! Order within one step: momentum accumulate, weight decay, apply.
//!
//! ```text
//! v ← μ·v + g
//! θ ← θ + lr·(v − decay·θ)      (decay applies to weight matrices only)
//! ```

use ndarray::{Array, Array1, Array2, Dimension};

use crate::error::{Error, Result};
use crate::rbm::{GradientEstimate, RbmParams};
use crate::regularizer::RegularizerConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateRule {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Epochs trained with `initial_momentum` before switching.
    pub momentum_switch_epoch: usize,
    pub weight_decay: f64,
    pub cd_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_init_std: f64,
    pub regularizer: RegularizerConfig,
}

impl TrainConfig {
    pub fn binary_default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            initial_momentum: 0.5,
            final_momentum: 0.9,
            momentum_switch_epoch: 5,
            weight_decay: 2e-4,
            cd_steps: 1,
            epochs: 50,
            batch_size: 100,
            weight_init_std: 0.01,
            regularizer: RegularizerConfig::default(),
        }
    }

    pub fn gaussian_default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 200,
            ..TrainConfig::binary_default()
        }
    }

    pub fn update_rule(&self, epoch: usize) -> UpdateRule {
        UpdateRule {
            learning_rate: self.learning_rate,
            momentum: if epoch < self.momentum_switch_epoch {
                self.initial_momentum
            } else {
                self.final_momentum
            },
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("optimizer.learning_rate", self.learning_rate)?;
        positive("optimizer.weight_init_std", self.weight_init_std)?;
        for (name, m) in [
            ("optimizer.initial_momentum", self.initial_momentum),
            ("optimizer.final_momentum", self.final_momentum),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {m}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.cd_steps == 0 {
            return Err(Error::Config(
                "optimizer.cd_steps must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(
                "optimizer.batch_size must be at least 1".into(),
            ));
        }
        self.regularizer.validate()
    }
}

/// Velocity buffers for an RBM.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl MomentumState {
    pub fn zeros_like(params: &RbmParams) -> Self {
        MomentumState {
            weights: Array2::zeros(params.weights.raw_dim()),
            visible_bias: Array1::zeros(params.num_visible()),
            hidden_bias: Array1::zeros(params.num_hidden()),
        }
    }
}

/// Computes the new value of one parameter array without committing it.
pub(crate) fn momentum_step<D: Dimension>(
    name: &str,
    param: &Array<f64, D>,
    velocity: &Array<f64, D>,
    grad: &Array<f64, D>,
    rule: &UpdateRule,
    decay: bool,
) -> Result<(Array<f64, D>, Array<f64, D>)> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::Parameter(format!(
            "{name}: parameter shape {:?}, gradient shape {:?}, velocity shape {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let new_velocity = velocity * rule.momentum + grad;
    let mut step = new_velocity.clone();
    if decay && rule.weight_decay != 0.0 {
        step.zip_mut_with(param, |s, &p| *s -= rule.weight_decay * p);
    }
    let updated = param + &(step * rule.learning_rate);
    if let Some(pos) = updated.iter().position(|v| !v.is_finite()) {
        let grad_val = grad.iter().nth(pos).copied().unwrap_or(f64::NAN);
        return Err(Error::Numerical(format!(
            "non-finite {name} after update at flat index {pos} (gradient entry {grad_val}, lr {})",
            rule.learning_rate
        )));
    }
    Ok((updated, new_velocity))
}

/// Applies one momentum step. On failure neither `params` nor `state` changes.
pub fn apply_update(
    params: &RbmParams,
    grad: &GradientEstimate,
    state: &mut MomentumState,
    rule: &UpdateRule,
) -> Result<RbmParams> {
    grad.check_shape(params)?;
    let (weights, vw) = momentum_step(
        "weights",
        &params.weights,
        &state.weights,
        &grad.d_weights,
        rule,
        true,
    )?;
    let (visible_bias, vb) = momentum_step(
        "visible bias",
        &params.visible_bias,
        &state.visible_bias,
        &grad.d_visible_bias,
        rule,
        false,
    )?;
    let (hidden_bias, vc) = momentum_step(
        "hidden bias",
        &params.hidden_bias,
        &state.hidden_bias,
        &grad.d_hidden_bias,
        rule,
        false,
    )?;
    state.weights = vw;
    state.visible_bias = vb;
    state.hidden_bias = vc;
    Ok(RbmParams {
        weights,
        visible_bias,
        hidden_bias,
        visible_type: params.visible_type,
    })
}
