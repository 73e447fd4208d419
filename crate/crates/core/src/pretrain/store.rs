use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::FrozenEncoder;
use crate::error::{Error, Result};
use crate::prompt::{PromptCache, PromptRecord};

pub const STORE_VERSION: &str = "c2vl-store-v1";
const CHUNK: usize = 256;

/// Frozen vision and language embeddings of every prompt, row-aligned with `ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    pub version: String,
    pub encoder: String,
    pub encoder_digest: String,
    pub dim: usize,
    pub ids: Vec<String>,
    pub vision: Array2<f64>,
    pub language: Array2<f64>,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let store: EmbeddingStore = serde_json::from_slice(&std::fs::read(path)?)?;
        if store.version != STORE_VERSION {
            return Err(Error::Validation(format!(
                "{}: unsupported store version `{}`",
                path.display(),
                store.version
            )));
        }
        Ok(store)
    }
}

/// Encodes every record once with the frozen encoders.
pub fn precompute_prompt_embeddings(
    records: &[PromptRecord],
    frozen: &dyn FrozenEncoder,
    expected_dim: usize,
) -> Result<EmbeddingStore> {
    if frozen.dim() != expected_dim {
        return Err(Error::config(
            "model.embed_dim",
            format!("{expected_dim} does not match frozen encoder width {}", frozen.dim()),
        ));
    }
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = records.len();
    let mut vision = Array2::zeros((n, expected_dim));
    let mut language = Array2::zeros((n, expected_dim));
    for (c, chunk) in records.chunks(CHUNK).enumerate() {
        let images = chunk.iter().map(|r| r.vision.decode()).collect::<Result<Vec<_>>>()?;
        let texts: Vec<String> = chunk.iter().map(|r| r.language.text.clone()).collect();
        let v = frozen.encode_images(&images)?;
        let l = frozen.encode_texts(&texts)?;
        let start = c * CHUNK;
        vision
            .slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(v.matrix());
        language
            .slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(l.matrix());
    }
    Ok(EmbeddingStore {
        version: STORE_VERSION.into(),
        encoder: frozen.name().into(),
        encoder_digest: frozen.digest(),
        dim: expected_dim,
        ids: records.iter().map(|r| r.sample_id.clone()).collect(),
        vision,
        language,
    })
}

/// Reads the records for `ids` from a cache, failing with every missing id.
pub fn records_for(cache: &PromptCache, ids: &[String]) -> Result<Vec<PromptRecord>> {
    let missing: Vec<String> = ids.iter().filter(|id| !cache.contains(id)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrompts(missing));
    }
    ids.iter().map(|id| cache.get(id)).collect()
}
