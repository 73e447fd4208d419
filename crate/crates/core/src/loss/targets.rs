use ndarray::{Array2, ArrayView2};

use super::kernels::{softmax_rows, SoftTargetMatrix, TargetKind};
use crate::encoder::EmbeddingBatch;
use crate::error::{Error, Result};

/// Intra-modal self-similarity target `β softmax(XX^T/τ_t) + (1-β) I`.
pub fn intra_targets(x: &EmbeddingBatch, beta: f64, tau_t: f64) -> Result<SoftTargetMatrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config("loss.beta", format!("must lie in [0, 1], got {beta}")));
    }
    Ok(SoftTargetMatrix {
        matrix: intra_matrix(x.view(), beta, tau_t),
        kind: TargetKind::Intra,
        beta: Some(beta),
    })
}

pub(crate) fn intra_matrix(x: ArrayView2<f64>, beta: f64, tau_t: f64) -> Array2<f64> {
    let b = x.nrows();
    let eye = Array2::<f64>::eye(b);
    if beta == 0.0 {
        return eye;
    }
    softmax_rows((x.dot(&x.t()) / tau_t).view()) * beta + eye * (1.0 - beta)
}

/// Logits of the cross-consistency target for predicting `b` rows from `a`
/// anchors: `(i, j) = <a_i, b_j> + <b_i, a_i> + <a_j, b_j>`.
///
/// This is the Hadamard-mask reading of the cycle-consistency target: the
/// identity products select the diagonal of the positive-pair similarities,
/// broadcast along rows (second term) and along columns (third term). The
/// second term is constant within a row and drops out under softmax.
pub(crate) fn inter_logits(a: ArrayView2<f64>, b: ArrayView2<f64>, with_row_constant: bool) -> Array2<f64> {
    let ab = a.dot(&b.t());
    let n = ab.nrows();
    let mut out = ab.clone();
    for i in 0..n {
        for j in 0..n {
            if with_row_constant {
                out[[i, j]] += ab[[i, i]];
            }
            out[[i, j]] += ab[[j, j]];
        }
    }
    out
}

pub(crate) fn inter_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>, tau_t: f64, with_row_constant: bool) -> Array2<f64> {
    softmax_rows((inter_logits(a, b, with_row_constant) / tau_t).view())
}

/// Cross-consistency targets `(Q_v2s, Q_s2v)`.
///
/// `Q_v2s[i, j] = softmax_j((<s_i,v_j> + <v_i,s_i> + <s_j,v_j>) / τ_t)` supervises
/// vision-to-skeleton rows; `Q_s2v` swaps the roles of `S` and `V`.
pub fn inter_targets(
    s: &EmbeddingBatch,
    v: &EmbeddingBatch,
    tau_t: f64,
) -> Result<(SoftTargetMatrix, SoftTargetMatrix)> {
    inter_targets_with(s, v, tau_t, true)
}

/// As [`inter_targets`], optionally dropping the row-constant middle term.
pub fn inter_targets_with(
    s: &EmbeddingBatch,
    v: &EmbeddingBatch,
    tau_t: f64,
    with_row_constant: bool,
) -> Result<(SoftTargetMatrix, SoftTargetMatrix)> {
    if s.rows() != v.rows() || s.dim() != v.dim() {
        return Err(Error::Shape(format!(
            "skeleton {}x{} vs other {}x{}",
            s.rows(),
            s.dim(),
            v.rows(),
            v.dim()
        )));
    }
    let wrap = |matrix| SoftTargetMatrix {
        matrix,
        kind: TargetKind::Inter,
        beta: None,
    };
    Ok((
        wrap(inter_matrix(s.view(), v.view(), tau_t, with_row_constant)),
        wrap(inter_matrix(v.view(), s.view(), tau_t, with_row_constant)),
    ))
}
