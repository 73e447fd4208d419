//! The combined progressive soft-target objective and its analytic gradient.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::kernels::soft_cross_entropy_grad;
use super::targets::{inter_matrix, intra_matrix};
use crate::encoder::{normalize_rows, normalize_rows_backward, EmbeddingBatch};
use crate::error::{Error, Result};
use crate::schedule::BatchPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTemperature {
    /// Targets use the same τ as the logits.
    Shared,
    /// Targets use τ = 1.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Progressive soft-target objective.
    Soft,
    /// Hard one-hot targets on every row: bidirectional InfoNCE per branch.
    Infonce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub mode: LossMode,
    pub beta: f64,
    pub target_temperature: TargetTemperature,
    /// Use intra-modal self-similarity targets; identity targets otherwise.
    pub intra: bool,
    /// Use inter-modal cross-consistency targets; identity targets otherwise.
    pub inter: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mode: LossMode::Soft,
            beta: 0.2,
            target_temperature: TargetTemperature::Shared,
            intra: true,
            inter: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("loss.beta", format!("must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }

    fn target_tau(&self, tau: f64) -> f64 {
        match self.target_temperature {
            TargetTemperature::Shared => tau,
            TargetTemperature::Unit => 1.0,
        }
    }
}

/// Loss value with its per-branch components (each unweighted by α).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub sv_intra: f64,
    pub sv_inter: f64,
    pub sl_intra: f64,
    pub sl_inter: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.sv_intra, self.sv_inter, self.sl_intra, self.sl_inter]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Rows supervised by each target family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSplit {
    pub intra: Range<usize>,
    pub inter: Range<usize>,
}

impl RowSplit {
    /// Leading `B_intra` rows use intra targets, the rest inter targets.
    pub fn from_partition(p: &BatchPartition) -> Self {
        RowSplit {
            intra: p.intra_rows(),
            inter: p.inter_rows(),
        }
    }

    /// Every row receives both target families.
    pub fn full(batch: usize) -> Self {
        RowSplit {
            intra: 0..batch,
            inter: 0..batch,
        }
    }
}

/// Gradient-stopped targets for one skeleton/other branch, all `B × B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTargets {
    /// Supervises skeleton-to-other rows in the intra subset (from `SS^T`).
    pub p_s2x: Array2<f64>,
    /// Supervises other-to-skeleton rows in the intra subset (from `XX^T`).
    pub p_x2s: Array2<f64>,
    /// Supervises skeleton-to-other rows in the inter subset.
    pub q_s2x: Array2<f64>,
    /// Supervises other-to-skeleton rows in the inter subset.
    pub q_x2s: Array2<f64>,
}

impl BranchTargets {
    /// Computes the targets from unit-norm teacher embeddings.
    pub fn compute(s: ArrayView2<f64>, x: ArrayView2<f64>, cfg: &LossConfig, tau: f64) -> Self {
        let b = s.nrows();
        let tt = cfg.target_tau(tau);
        let (p_s2x, p_x2s) = if cfg.intra {
            (intra_matrix(s, cfg.beta, tt), intra_matrix(x, cfg.beta, tt))
        } else {
            (Array2::eye(b), Array2::eye(b))
        };
        let (q_s2x, q_x2s) = if cfg.inter {
            // Q_s2v swaps roles: logits <v_i,s_j> + <s_i,v_i> + <v_j,s_j>
            (inter_matrix(x, s, tt, true), inter_matrix(s, x, tt, true))
        } else {
            (Array2::eye(b), Array2::eye(b))
        };
        BranchTargets {
            p_s2x,
            p_x2s,
            q_s2x,
            q_x2s,
        }
    }
}

/// One branch's loss parts and gradients with respect to its unit embeddings.
#[derive(Debug, Clone)]
pub struct BranchResult {
    pub intra: f64,
    pub inter: f64,
    pub grad_skeleton: Array2<f64>,
    pub grad_other: Array2<f64>,
    /// Derivative of `α·intra + (1-α)·inter` with respect to `ln τ`.
    pub grad_log_tau: f64,
}

#[allow(clippy::too_many_arguments)]
fn direction(
    anchor: ArrayView2<f64>,
    other: ArrayView2<f64>,
    targets: &Array2<f64>,
    rows: &Range<usize>,
    weight: f64,
    tau: f64,
    grad_anchor: &mut Array2<f64>,
    grad_other: &mut Array2<f64>,
    grad_log_tau: &mut f64,
) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let a = anchor.slice(s![rows.clone(), ..]);
    let z = a.dot(&other.t()) / tau;
    let t = targets.slice(s![rows.clone(), ..]);
    let (h, g) = soft_cross_entropy_grad(t, z.view());
    if weight != 0.0 {
        let gw = g * (weight / tau);
        let mut ga = grad_anchor.slice_mut(s![rows.clone(), ..]);
        ga += &gw.dot(&other);
        *grad_other += &gw.t().dot(&a);
        *grad_log_tau -= (&gw * &z).sum() * tau;
    }
    h
}

/// Evaluates `α·[H(P_s2x, SX^T) + H(P_x2s, XS^T)]_intra + (1-α)·[H(Q_s2x, SX^T) + H(Q_x2s, XS^T)]_inter`
/// on unit embeddings with fixed targets.
pub fn branch_loss(
    s: ArrayView2<f64>,
    x: ArrayView2<f64>,
    targets: &BranchTargets,
    rows: &RowSplit,
    alpha: f64,
    tau: f64,
) -> BranchResult {
    let mut gs = Array2::zeros(s.raw_dim());
    let mut gx = Array2::zeros(x.raw_dim());
    let mut gt = 0.0;
    let wi = alpha;
    let we = 1.0 - alpha;
    let intra = direction(s, x, &targets.p_s2x, &rows.intra, wi, tau, &mut gs, &mut gx, &mut gt)
        + direction(x, s, &targets.p_x2s, &rows.intra, wi, tau, &mut gx, &mut gs, &mut gt);
    let inter = direction(s, x, &targets.q_s2x, &rows.inter, we, tau, &mut gs, &mut gx, &mut gt)
        + direction(x, s, &targets.q_x2s, &rows.inter, we, tau, &mut gx, &mut gs, &mut gt);
    BranchResult {
        intra,
        inter,
        grad_skeleton: gs,
        grad_other: gx,
        grad_log_tau: gt,
    }
}

/// Raw (pre-normalization) embeddings for one alignment branch.
#[derive(Debug, Clone, Copy)]
pub struct RawBranch<'a> {
    pub skeleton: ArrayView2<'a, f64>,
    pub other: ArrayView2<'a, f64>,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct RawBranchOutput {
    pub intra: f64,
    pub inter: f64,
    pub grad_skeleton: Array2<f64>,
    pub grad_other: Array2<f64>,
    pub grad_log_tau: f64,
    pub targets: BranchTargets,
}

/// Normalizes a branch's raw embeddings, computes (or reuses) detached
/// targets, and returns the loss parts with gradients on the raw inputs.
pub fn branch_loss_raw(
    branch: RawBranch<'_>,
    rows: &RowSplit,
    alpha: f64,
    cfg: &LossConfig,
    fixed_targets: Option<&BranchTargets>,
) -> RawBranchOutput {
    let (su, sn) = normalize_rows(branch.skeleton);
    let (xu, xn) = normalize_rows(branch.other);
    let targets = match fixed_targets {
        Some(t) => t.clone(),
        None => BranchTargets::compute(su.view(), xu.view(), cfg, branch.tau),
    };
    let r = branch_loss(su.view(), xu.view(), &targets, rows, alpha, branch.tau);
    RawBranchOutput {
        intra: r.intra,
        inter: r.inter,
        grad_skeleton: normalize_rows_backward(branch.skeleton, &sn, r.grad_skeleton.view()),
        grad_other: normalize_rows_backward(branch.other, &xn, r.grad_other.view()),
        grad_log_tau: r.grad_log_tau,
        targets,
    }
}

fn check_inputs(s: &EmbeddingBatch, others: &[&EmbeddingBatch]) -> Result<()> {
    if s.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    for o in others {
        if o.rows() != s.rows() || o.dim() != s.dim() {
            return Err(Error::Shape(format!(
                "skeleton {}x{} vs {:?} {}x{}",
                s.rows(),
                s.dim(),
                o.modality(),
                o.rows(),
                o.dim()
            )));
        }
    }
    Ok(())
}

/// Total soft loss `L_sv + L_sl` for a partitioned batch, with targets computed
/// from the same embeddings.
pub fn combined_soft_loss(
    s: &EmbeddingBatch,
    v: &EmbeddingBatch,
    l: &EmbeddingBatch,
    partition: &BatchPartition,
    cfg: &LossConfig,
    tau: f64,
) -> Result<LossBreakdown> {
    check_inputs(s, &[v, l])?;
    partition.check(s.rows())?;
    cfg.validate()?;
    combined_rows(s, v, s, l, &RowSplit::from_partition(partition), partition.alpha, cfg, tau)
}

/// As [`combined_soft_loss`] with separate skeleton embeddings per branch and an
/// explicit row split.
#[allow(clippy::too_many_arguments)]
pub fn combined_rows(
    s_v: &EmbeddingBatch,
    v: &EmbeddingBatch,
    s_l: &EmbeddingBatch,
    l: &EmbeddingBatch,
    rows: &RowSplit,
    alpha: f64,
    cfg: &LossConfig,
    tau: f64,
) -> Result<LossBreakdown> {
    check_inputs(s_v, &[v, s_l, l])?;
    let sv = branch_loss(
        s_v.view(),
        v.view(),
        &BranchTargets::compute(s_v.view(), v.view(), cfg, tau),
        rows,
        alpha,
        tau,
    );
    let sl = branch_loss(
        s_l.view(),
        l.view(),
        &BranchTargets::compute(s_l.view(), l.view(), cfg, tau),
        rows,
        alpha,
        tau,
    );
    Ok(LossBreakdown {
        total: alpha * (sv.intra + sl.intra) + (1.0 - alpha) * (sv.inter + sl.inter),
        sv_intra: sv.intra,
        sv_inter: sv.inter,
        sl_intra: sl.intra,
        sl_inter: sl.inter,
        alpha,
        beta: cfg.beta,
        tau,
    })
}
