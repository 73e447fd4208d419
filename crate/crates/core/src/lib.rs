//! Cross-modal soft-target pretraining of skeleton action encoders against
//! frozen vision and language knowledge-prompt embeddings, with the downstream
//! evaluation protocols.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod pretrain;
pub mod prompt;
pub mod schedule;
pub mod smoke;

pub use error::{Error, Result};
