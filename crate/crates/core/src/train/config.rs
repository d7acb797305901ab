use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub epochs_total: usize,
    pub epochs_warmup: usize,
    pub epochs_cooldown: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Parameters exempt from weight decay: matched against the full name or its
    /// last dotted component.
    pub no_decay: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-5,
            min_lr: 1e-6,
            weight_decay: 0.1,
            epochs_total: 200,
            epochs_warmup: 20,
            epochs_cooldown: 10,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            no_decay: vec!["gain".into(), "bias".into(), "latents".into()],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_total == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs_total and batch_size must be positive".into()));
        }
        if self.epochs_warmup + self.epochs_cooldown > self.epochs_total {
            return Err(Error::Config(format!(
                "warmup {} + cooldown {} exceed {} total epochs",
                self.epochs_warmup, self.epochs_cooldown, self.epochs_total
            )));
        }
        let rates = [self.base_lr, self.min_lr, self.weight_decay, self.eps];
        if rates.iter().any(|x| !x.is_finite() || *x < 0.0) || self.min_lr > self.base_lr {
            return Err(Error::Config("learning rates, decay and eps must be finite, nonnegative, min_lr ≤ base_lr".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn decays(&self, name: &str) -> bool {
        let last = name.rsplit('.').next().unwrap_or(name);
        !self.no_decay.iter().any(|n| n == name || n == last)
    }
}
