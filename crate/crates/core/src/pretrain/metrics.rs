use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "epoch,alpha,lr,loss_total,loss_sv_intra,loss_sv_inter,loss_sl_intra,loss_sl_inter,tau";

/// Batch-averaged losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub alpha: f64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sv_intra: f64,
    pub loss_sv_inter: f64,
    pub loss_sl_intra: f64,
    pub loss_sl_inter: f64,
    pub tau: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.alpha,
            self.lr,
            self.loss_total,
            self.loss_sv_intra,
            self.loss_sv_inter,
            self.loss_sl_intra,
            self.loss_sl_inter,
            self.tau
        )
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    f.flush()?;
    Ok(())
}
