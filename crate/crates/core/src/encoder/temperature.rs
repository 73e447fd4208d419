use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAU_INIT: f64 = 0.07;
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemperatureMode {
    Fixed,
    Learnable,
}

/// Softmax temperature stored as `ln τ` and kept inside `[TAU_MIN, TAU_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParam {
    pub log_tau: f64,
    pub mode: TemperatureMode,
}

impl TemperatureParam {
    pub fn new(tau: f64, mode: TemperatureMode) -> Result<Self> {
        if !(TAU_MIN..=TAU_MAX).contains(&tau) {
            return Err(Error::config(
                "temperature.init",
                format!("{tau} outside [{TAU_MIN}, {TAU_MAX}]"),
            ));
        }
        Ok(TemperatureParam {
            log_tau: tau.ln(),
            mode,
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp().clamp(TAU_MIN, TAU_MAX)
    }

    pub fn is_learnable(&self) -> bool {
        self.mode == TemperatureMode::Learnable
    }

    /// Gradient step on `ln τ`; a no-op in fixed mode.
    pub fn step(&mut self, grad_log_tau: f64, lr: f64) {
        if self.is_learnable() && grad_log_tau.is_finite() {
            self.log_tau = (self.log_tau - lr * grad_log_tau).clamp(TAU_MIN.ln(), TAU_MAX.ln());
        }
    }
}

impl Default for TemperatureParam {
    fn default() -> Self {
        TemperatureParam {
            log_tau: TAU_INIT.ln(),
            mode: TemperatureMode::Learnable,
        }
    }
}
