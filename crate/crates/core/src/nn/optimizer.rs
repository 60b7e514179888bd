//! First-order optimizers over `Mlp` parameters.

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMethod {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: OptimizerMethod::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "{field}.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0) || !(self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(Error::Config(format!("{field}.beta1/beta2 must lie in [0, 1)")));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("{field}.epsilon must be > 0")));
        }
        Ok(())
    }
}

/// Outcome of one update; non-finite gradients are rejected, not applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Applied,
    RejectedNonFinite,
}

/// Optimizer state whose moment buffers mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, net: &Mlp) -> Self {
        OptimizerState {
            config,
            step: 0,
            m: MlpGrads::zeros_like(net),
            v: MlpGrads::zeros_like(net),
        }
    }

    /// Applies one SGD or bias-corrected Adam update in place.
    pub fn apply(&mut self, net: &mut Mlp, grads: &MlpGrads) -> StepStatus {
        self.apply_scaled(net, grads, 1.0)
    }

    /// Like `apply`, with the learning rate multiplied by `lr_scale`
    /// (used for decay schedules).
    pub fn apply_scaled(&mut self, net: &mut Mlp, grads: &MlpGrads, lr_scale: f64) -> StepStatus {
        if !grads.is_finite() {
            return StepStatus::RejectedNonFinite;
        }
        self.step += 1;
        let lr = self.config.learning_rate * lr_scale;
        match self.config.method {
            OptimizerMethod::Sgd => {
                for l in 0..net.weights.len() {
                    for (p, g) in net.weights[l].iter_mut().zip(&grads.weights[l]) {
                        *p -= lr * g;
                    }
                    for (p, g) in net.biases[l].iter_mut().zip(&grads.biases[l]) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerMethod::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);
                let bc1 = 1.0 - b1.powi(self.step as i32);
                let bc2 = 1.0 - b2.powi(self.step as i32);
                let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                };
                for l in 0..net.weights.len() {
                    update(
                        &mut net.weights[l],
                        &grads.weights[l],
                        &mut self.m.weights[l],
                        &mut self.v.weights[l],
                    );
                    update(
                        &mut net.biases[l],
                        &grads.biases[l],
                        &mut self.m.biases[l],
                        &mut self.v.biases[l],
                    );
                }
            }
        }
        StepStatus::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_net(p: f64) -> Mlp {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        net.weights[0][0] = p;
        net
    }

    fn grad_of(net: &Mlp, g: f64) -> MlpGrads {
        let mut grads = MlpGrads::zeros_like(net);
        grads.weights[0][0] = g;
        grads
    }

    #[test]
    fn sgd_step() {
        let mut net = scalar_net(1.0);
        let cfg = OptimizerConfig {
            method: OptimizerMethod::Sgd,
            learning_rate: 0.1,
            ..OptimizerConfig::default()
        };
        let mut opt = OptimizerState::new(cfg, &net);
        let grads = grad_of(&net, 2.0);
        assert_eq!(opt.apply(&mut net, &grads), StepStatus::Applied);
        assert!((net.weights[0][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut net = scalar_net(0.7);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &net);
        let grads = grad_of(&net, 0.0);
        opt.apply(&mut net, &grads);
        assert_eq!(net.weights[0][0], 0.7);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // Bias correction makes m_hat = g and v_hat = g^2, so the first step
        // is lr * g / (|g| + eps) ~ lr regardless of the gradient size.
        for &g in &[0.001, 0.5, -3.0, 40.0] {
            let mut net = scalar_net(2.0);
            let mut opt = OptimizerState::new(OptimizerConfig::default(), &net);
            let grads = grad_of(&net, g);
            opt.apply(&mut net, &grads);
            let delta = (net.weights[0][0] - 2.0).abs();
            assert!((delta - 1e-3).abs() < 1e-6, "step magnitude {delta}");
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = scalar_net(1.0);
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &net);
        let grads = grad_of(&net, f64::NAN);
        assert_eq!(opt.apply(&mut net, &grads), StepStatus::RejectedNonFinite);
        assert_eq!(net.weights[0][0], 1.0);
        assert_eq!(opt.step, 0);
    }
}
