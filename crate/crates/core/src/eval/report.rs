use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one evaluation protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub benchmark: String,
    /// Top-1 accuracy in percent.
    pub accuracy: f64,
    /// Per-class recall in percent; NaN-free, zero for classes absent from the test set.
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub config_digest: String,
}

impl EvalReport {
    pub fn from_predictions(
        protocol: &str,
        benchmark: &str,
        predictions: &[usize],
        labels: &[usize],
        n_classes: usize,
        config_digest: &str,
    ) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Data("no test samples".into()));
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= n_classes || y >= n_classes {
                return Err(Error::Data(format!("class index {} outside {n_classes} classes", p.max(y))));
            }
            confusion[y][p] += 1;
        }
        let trace: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    100.0 * row[c] as f64 / n as f64
                }
            })
            .collect();
        Ok(EvalReport {
            protocol: protocol.into(),
            benchmark: benchmark.into(),
            accuracy: 100.0 * trace as f64 / labels.len() as f64,
            per_class,
            confusion,
            config_digest: config_digest.into(),
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Accuracy recomputed from the confusion matrix.
    pub fn confusion_accuracy(&self) -> f64 {
        let trace: usize = (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum();
        100.0 * trace as f64 / self.total().max(1) as f64
    }

    /// Writes `<stem>.json` and `<stem>_confusion.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(self)?)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_confusion.csv")))?);
        let n = self.confusion.len();
        let header: Vec<String> = (0..n).map(|c| format!("pred_{c}")).collect();
        writeln!(f, "true,{}", header.join(","))?;
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{c},{}", cells.join(","))?;
        }
        f.flush()?;
        Ok(())
    }
}
