use super::network::{GradientSet, Parameters, ScorerNetwork};
use crate::error::{invalid, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
///
/// `v <- momentum * v + (g + weight_decay * p)`, then `p <- p - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Parameters,
}

impl OptimizerState {
    pub fn sgd(net: &ScorerNetwork, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if weight_decay < 0.0 || !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(invalid("learning rate must be > 0 and weight decay >= 0"));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: net.params().zeros_like(),
        })
    }

    pub fn velocity(&self) -> &Parameters {
        &self.velocity
    }

    pub fn step(&mut self, net: &mut ScorerNetwork, grads: &GradientSet) -> Result<()> {
        net.params().ensure_congruent(grads)?;
        net.params().ensure_congruent(&self.velocity)?;
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        let params = net.params_mut();
        for ((p, g), v) in params
            .arrays_mut()
            .into_iter()
            .zip(grads.arrays())
            .zip(self.velocity.arrays_mut())
        {
            for i in 0..p.len() {
                v[i] = mu * v[i] + (g[i] + wd * p[i]);
                p[i] -= lr * v[i];
            }
        }
        Ok(())
    }
}
