use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::EpochMetrics;
use super::model::C2vlModel;
use super::optim::Sgd;
use crate::data::StreamKind;
use crate::encoder::{Parameters, SkeletonEncoder};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "c2vl-ckpt-v1";
pub const ENCODER_VERSION: &str = "c2vl-encoder-v1";

/// Training state after `epochs_completed` epochs. Frozen encoders excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub epochs_completed: usize,
    pub global_step: usize,
    pub seed: u64,
    pub config_digest: String,
    pub model: C2vlModel,
    pub optimizer: Sgd,
    pub metrics: Vec<EpochMetrics>,
    pub digest: String,
}

/// Downstream artifact: the skeleton encoder alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderExport {
    pub version: String,
    pub stream: StreamKind,
    pub encoder: SkeletonEncoder,
    pub digest: String,
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!("{}: unsupported checkpoint version `{}`", path.display(), ck.version)));
        }
        if ck.model.digest() != ck.digest {
            return Err(Error::Validation(format!("{}: weight digest mismatch", path.display())));
        }
        Ok(ck)
    }

    pub fn export_encoder(&self) -> EncoderExport {
        EncoderExport {
            version: ENCODER_VERSION.into(),
            stream: self.model.stream,
            encoder: self.model.encoder.clone(),
            digest: self.model.encoder.digest(),
        }
    }
}

impl EncoderExport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }
}

/// Loads a skeleton encoder from either a full checkpoint or an encoder export.
pub fn load_encoder(path: &Path) -> Result<EncoderExport> {
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(CHECKPOINT_VERSION) => Ok(Checkpoint::load(path)?.export_encoder()),
        Some(ENCODER_VERSION) => {
            let e: EncoderExport = serde_json::from_value(value)?;
            if e.encoder.digest() != e.digest {
                return Err(Error::Validation(format!("{}: weight digest mismatch", path.display())));
            }
            Ok(e)
        }
        other => Err(Error::Validation(format!(
            "{}: not a checkpoint (version {:?})",
            path.display(),
            other
        ))),
    }
}
