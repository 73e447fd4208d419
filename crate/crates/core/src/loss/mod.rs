//! Similarity logits, InfoNCE, soft targets and the combined objective.

mod kernels;
mod objective;
mod targets;

pub use kernels::{
    cosine_logits, infonce_bidirectional, log_softmax_rows, soft_cross_entropy, soft_cross_entropy_grad,
    softmax_rows, SimilarityMatrix, SoftTargetMatrix, TargetKind, PROB_FLOOR,
};
pub use objective::{
    branch_loss, branch_loss_raw, combined_rows, combined_soft_loss, BranchResult, BranchTargets, LossBreakdown,
    LossConfig, LossMode, RawBranch, RawBranchOutput, RowSplit, TargetTemperature,
};
pub use targets::{inter_targets, inter_targets_with, intra_targets};
