use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard added to the norm before division.
pub const NORM_EPS: f64 = 1e-12;
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Skeleton,
    Vision,
    Language,
}

/// `B × d` matrix whose rows have unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    matrix: Array2<f64>,
    modality: Modality,
}

impl EmbeddingBatch {
    /// Wraps an already-normalized matrix, checking every row norm.
    pub fn new(matrix: Array2<f64>, modality: Modality) -> Result<Self> {
        for (i, row) in matrix.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Validation(format!("row {i} has norm {n}, expected 1")));
            }
        }
        Ok(EmbeddingBatch { matrix, modality })
    }

    /// Normalizes each row of `raw`.
    pub fn from_raw(raw: ArrayView2<f64>, modality: Modality) -> Self {
        EmbeddingBatch {
            matrix: normalize_rows(raw).0,
            modality,
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows selected by index, keeping the modality tag.
    pub fn select(&self, idx: &[usize]) -> Self {
        EmbeddingBatch {
            matrix: self.matrix.select(Axis(0), idx),
            modality: self.modality,
        }
    }
}

/// L2-normalizes rows as `x / (|x| + eps)`. Rows whose norm vanishes map to the
/// first basis vector so the output is always unit-norm and finite.
///
/// Returns the normalized rows and the raw norms.
pub fn normalize_rows(raw: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut out = raw.to_owned();
    let mut norms = Array1::zeros(raw.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        norms[i] = n;
        row.mapv_inplace(|v| v / (n + NORM_EPS));
        let m = row.dot(&row).sqrt();
        if !(m > 0.5) {
            row.fill(0.0);
            if !row.is_empty() {
                row[0] = 1.0;
            }
        }
    }
    (out, norms)
}

/// Backpropagates through [`normalize_rows`].
pub fn normalize_rows_backward(
    raw: ArrayView2<f64>,
    norms: &Array1<f64>,
    grad_unit: ArrayView2<f64>,
) -> Array2<f64> {
    let mut grad = Array2::zeros(raw.raw_dim());
    for i in 0..raw.nrows() {
        let n = norms[i];
        let x = raw.row(i);
        let g = grad_unit.row(i);
        let denom = n + NORM_EPS;
        if !(n / denom > 0.5) {
            continue;
        }
        let xg = x.dot(&g);
        let mut out = grad.row_mut(i);
        for k in 0..x.len() {
            out[k] = g[k] / denom - x[k] * xg / (n * denom * denom);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_row_becomes_unit_without_nan() {
        let raw = array![[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]];
        let (u, _) = normalize_rows(raw.view());
        assert!(u.iter().all(|v| v.is_finite()));
        assert_eq!(u.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert!((u[[1, 0]] - 0.6).abs() < 1e-12);
        EmbeddingBatch::new(u, Modality::Skeleton).unwrap();
    }

    #[test]
    fn backward_matches_finite_differences() {
        let raw = array![[0.3, -1.2, 0.5], [2.0, 0.1, -0.4]];
        let weights = array![[0.7, -0.2, 1.1], [0.4, 0.9, -1.3]];
        let f = |r: &Array2<f64>| (normalize_rows(r.view()).0 * &weights).sum();
        let (_, norms) = normalize_rows(raw.view());
        let g = normalize_rows_backward(raw.view(), &norms, weights.view());
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let mut p = raw.clone();
                p[[i, k]] += h;
                let mut m = raw.clone();
                m[[i, k]] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!((fd - g[[i, k]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_non_unit_rows() {
        assert!(EmbeddingBatch::new(array![[1.0, 1.0]], Modality::Vision).is_err());
    }
}
