//! Skeleton graph encoder, projectors, frozen vision/language encoders and the
//! learnable temperature.

mod embedding;
mod feature_norm;
mod frozen;
mod params;
mod projector;
mod stgcn;
mod temperature;

pub use embedding::{normalize_rows, normalize_rows_backward, EmbeddingBatch, Modality, NORM_EPS, UNIT_NORM_TOL};
pub use feature_norm::{FeatureNorm, FeatureNormCache};
pub use frozen::{load_frozen, FrozenEncoder, FrozenEncoderKind, StubFrozenEncoder, ENV_CLIP_PATH};
pub use params::Parameters;
pub(crate) use params::hex;
pub use projector::{Projector, ProjectorCache};
pub use stgcn::{prepare_input, ForwardCache, GraphBlock, SkeletonEncoder, SkeletonEncoderConfig};
pub use temperature::{TemperatureMode, TemperatureParam, TAU_INIT, TAU_MAX, TAU_MIN};
