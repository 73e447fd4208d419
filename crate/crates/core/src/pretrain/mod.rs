//! Cross-modal pretraining: prompt-embedding store, model state, optimizer,
//! checkpoints and the training loop.

mod checkpoint;
mod metrics;
mod model;
mod optim;
mod store;
mod train;

pub use checkpoint::{load_encoder, write_atomic, Checkpoint, EncoderExport, CHECKPOINT_VERSION, ENCODER_VERSION};
pub use metrics::{write_metrics_csv, EpochMetrics, METRICS_HEADER};
pub use model::{encoder_config, C2vlModel};
pub use optim::Sgd;
pub use store::{precompute_prompt_embeddings, records_for, EmbeddingStore, STORE_VERSION};
pub use train::{effective_alpha, pretrain_run, train_step, PretrainData, StepOutput, PretrainOutcome, StepLoss};
