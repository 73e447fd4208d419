//! Downstream evaluation protocols and reports.

mod head;
mod knn;
mod protocols;
mod report;

pub use head::{argmax_rows, train_head, HeadTraining, LinearHead, Standardizer};
pub use knn::knn_predict;
pub use protocols::{
    class_scores, dump_embeddings, expected_subset_size, extract_features, finetune_encoder, finetune_eval,
    fuse_streams, knn_eval, labels_of, linear_probe, linear_probe_features, remap_joints, semi_eval,
    similarity_histogram_csv, transfer_eval, EvalContext, SemiRun, StreamScores,
};
pub use report::EvalReport;
