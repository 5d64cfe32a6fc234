//! Surrogate-gradient training of spiking networks.

mod adam;
mod bptt;
mod fit;

pub use adam::Adam;
pub use bptt::{bptt_gradients, cross_entropy, Gradients, Sample};
pub use fit::{fit_classifier, train_sample_seed, EpochStats, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sharpness of the fast-sigmoid relaxation of the spike function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub beta: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec { beta: 100.0 }
    }
}

/// `1 / (1 + beta |v - v_th|)^2`. Zero when the threshold is infinite.
pub fn surrogate_derivative(v: f64, v_th: f64, spec: SurrogateSpec) -> f64 {
    let d = 1.0 + spec.beta * (v - v_th).abs();
    1.0 / (d * d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub surrogate_beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.002,
            batch_size: 64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            surrogate_beta: 100.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks ranges. A zero learning rate is accepted so that a run can be
    /// used as a frozen pass over the data.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning rate must be finite and non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("Adam eps must be positive"));
        }
        if !(self.surrogate_beta > 0.0) {
            return Err(Error::config("surrogate beta must be positive"));
        }
        Ok(())
    }

    pub fn surrogate(&self) -> SurrogateSpec {
        SurrogateSpec {
            beta: self.surrogate_beta,
        }
    }
}
