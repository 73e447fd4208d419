//! Per-epoch α annealing, intra/inter batch partitioning and the step-decay
//! learning-rate schedule.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub start: f64,
    pub end: f64,
    pub total_epochs: usize,
}

impl AlphaSchedule {
    pub fn new(start: f64, end: f64, total_epochs: usize) -> Result<Self> {
        if !(0.0 <= end && end <= start && start <= 1.0) {
            return Err(Error::config(
                "schedule.alpha",
                format!("need 0 <= end <= start <= 1, got start={start} end={end}"),
            ));
        }
        Ok(AlphaSchedule {
            start,
            end,
            total_epochs,
        })
    }

    pub fn standard(total_epochs: usize) -> Self {
        AlphaSchedule {
            start: 0.9,
            end: 0.1,
            total_epochs,
        }
    }
}

/// Cosine-annealed α: `end + (start - end) * (1 + cos(pi * epoch / T)) / 2`.
///
/// Epochs beyond `T` are clamped to `T`.
pub fn alpha_at(epoch: usize, sched: &AlphaSchedule) -> f64 {
    let t = sched.total_epochs;
    if t == 0 {
        return sched.start;
    }
    let e = if epoch > t {
        log::warn!("alpha_at: epoch {epoch} beyond schedule length {t}; clamping");
        t
    } else {
        epoch
    };
    if e == t {
        return sched.end;
    }
    sched.end + (sched.start - sched.end) * (1.0 + (PI * e as f64 / t as f64).cos()) / 2.0
}

/// Split of a batch into a leading intra-target subset and a trailing inter-target subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPartition {
    pub batch: usize,
    pub intra: usize,
    pub inter: usize,
    pub alpha: f64,
}

impl BatchPartition {
    pub fn intra_rows(&self) -> Range<usize> {
        0..self.intra
    }

    pub fn inter_rows(&self) -> Range<usize> {
        self.intra..self.batch
    }

    pub fn check(&self, batch: usize) -> Result<()> {
        if self.intra + self.inter != batch || self.batch != batch {
            return Err(Error::Partition {
                intra: self.intra,
                inter: self.inter,
                batch,
            });
        }
        Ok(())
    }
}

/// `B_intra = floor(alpha * B)`, `B_inter = B - B_intra`.
pub fn partition_batch(batch: usize, alpha: f64) -> BatchPartition {
    let a = alpha.clamp(0.0, 1.0);
    // guard against 0.29 * 100 = 28.999... style rounding below an integer
    let raw = a * batch as f64;
    let intra = ((raw + 1e-9).floor() as usize).min(batch);
    BatchPartition {
        batch,
        intra,
        inter: batch - intra,
        alpha: a,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![130, 140],
            gamma: 0.1,
            epochs: 150,
            batch_size: 400,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("optimizer.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("optimizer.weight_decay", "must be non-negative"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("optimizer.gamma", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optimizer.batch_size", "must be positive"));
        }
        if let Some(&m) = self.milestones.iter().find(|&&m| m >= self.epochs) {
            return Err(Error::config(
                "optimizer.milestones",
                format!("milestone {m} not below epochs {}", self.epochs),
            ));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("optimizer.milestones", "must be strictly increasing"));
        }
        Ok(())
    }
}

/// Step decay: `lr * gamma^(number of milestones <= epoch)`.
pub fn lr_at(epoch: usize, cfg: &OptimizerConfig) -> f64 {
    let drops = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    cfg.lr * cfg.gamma.powi(drops as i32)
}
