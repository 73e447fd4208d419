use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};

/// Probabilities below this are floored inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Temperature-scaled cosine logits, `rows × B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub Array2<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Intra,
    Inter,
    Hard,
}

/// Row-stochastic soft-label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetMatrix {
    pub matrix: Array2<f64>,
    pub kind: TargetKind,
    pub beta: Option<f64>,
}

impl SoftTargetMatrix {
    pub fn identity(b: usize) -> Self {
        SoftTargetMatrix {
            matrix: Array2::eye(b),
            kind: TargetKind::Hard,
            beta: None,
        }
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_error(&self) -> f64 {
        self.matrix
            .sum_axis(Axis(1))
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_sum = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| (v - m) - log_sum);
    }
    out
}

/// `(i, j) = <a_i, b_j> / tau`.
pub fn cosine_logits(a: &EmbeddingBatch, b: &EmbeddingBatch, tau: f64) -> Result<SimilarityMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("embedding dims differ: {} vs {}", a.dim(), b.dim())));
    }
    Ok(SimilarityMatrix(a.matrix().dot(&b.matrix().t()) / tau))
}

/// Soft cross-entropy `-(1/rows) Σ_ij P_ij log softmax(logits)_ij`, returned with
/// its gradient with respect to the logits. Log-probabilities are floored at
/// `ln(1e-12)`; floored entries contribute no gradient.
pub fn soft_cross_entropy_grad(targets: ArrayView2<f64>, logits: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let rows = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    if rows == 0 {
        return (0.0, grad);
    }
    let floor = PROB_FLOOR.ln();
    let logp = log_softmax_rows(logits);
    let mut total = 0.0;
    for i in 0..rows {
        let mut live_mass = 0.0;
        for j in 0..logits.ncols() {
            let t = targets[[i, j]];
            let lp = logp[[i, j]];
            if lp > floor {
                total -= t * lp;
                live_mass += t;
                grad[[i, j]] -= t;
            } else {
                total -= t * floor;
            }
        }
        for j in 0..logits.ncols() {
            grad[[i, j]] += logp[[i, j]].exp() * live_mass;
        }
    }
    let scale = 1.0 / rows as f64;
    (total * scale, grad * scale)
}

/// Soft cross-entropy after validating that `targets` is row-stochastic.
pub fn soft_cross_entropy(targets: &SoftTargetMatrix, logits: &SimilarityMatrix) -> Result<f64> {
    if targets.matrix.dim() != logits.0.dim() {
        return Err(Error::Shape(format!(
            "targets {:?} vs logits {:?}",
            targets.matrix.dim(),
            logits.0.dim()
        )));
    }
    if targets.max_row_error() > 1e-4 || targets.matrix.iter().any(|&p| p < 0.0) {
        return Err(Error::Validation("target matrix is not row-stochastic".into()));
    }
    Ok(soft_cross_entropy_grad(targets.matrix.view(), logits.0.view()).0)
}

/// Symmetric InfoNCE `H(I, softmax(SV^T/τ)) + H(I, softmax(VS^T/τ))`.
pub fn infonce_bidirectional(s: &EmbeddingBatch, v: &EmbeddingBatch, tau: f64) -> Result<f64> {
    if s.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if s.rows() != v.rows() {
        return Err(Error::Shape(format!("batch sizes differ: {} vs {}", s.rows(), v.rows())));
    }
    let eye = Array2::eye(s.rows());
    let s2v = cosine_logits(s, v, tau)?;
    let v2s = SimilarityMatrix(s2v.0.t().to_owned());
    Ok(soft_cross_entropy_grad(eye.view(), s2v.0.view()).0 + soft_cross_entropy_grad(eye.view(), v2s.0.view()).0)
}
