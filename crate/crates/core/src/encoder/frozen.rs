use image::imageops::{resize, FilterType};
use image::RgbImage;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embedding::{normalize_rows, EmbeddingBatch, Modality};
use super::params::hex;
use crate::error::{Error, Result};

pub const ENV_CLIP_PATH: &str = "C2VL_CLIP_PATH";

/// Read-only image/text encoder producing targets in a shared space.
pub trait FrozenEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode_images(&self, images: &[RgbImage]) -> Result<EmbeddingBatch>;
    fn encode_texts(&self, texts: &[String]) -> Result<EmbeddingBatch>;
    /// Digest of every weight the encoder reads.
    fn digest(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrozenEncoderKind {
    #[serde(rename = "stub")]
    Stub,
    #[serde(rename = "clip-vit-l14-336")]
    ClipVitL14_336,
}

impl std::str::FromStr for FrozenEncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(FrozenEncoderKind::Stub),
            "clip-vit-l14-336" => Ok(FrozenEncoderKind::ClipVitL14_336),
            other => Err(Error::config("frozen_encoder", format!("unknown encoder '{other}'"))),
        }
    }
}

/// Builds the configured frozen encoder.
pub fn load_frozen(kind: FrozenEncoderKind, dim: usize, seed: u64) -> Result<Box<dyn FrozenEncoder>> {
    match kind {
        FrozenEncoderKind::Stub => Ok(Box::new(StubFrozenEncoder::new(dim, seed)?)),
        FrozenEncoderKind::ClipVitL14_336 => {
            let location = std::env::var(ENV_CLIP_PATH).unwrap_or_else(|_| "<unset>".into());
            Err(Error::config(
                "frozen_encoder",
                format!(
                    "clip-vit-l14-336 weights are not bundled (C2VL_CLIP_PATH={location}); \
                     set frozen_encoder = \"stub\" to run in stub mode"
                ),
            ))
        }
    }
}

const STUB_SIDE: u32 = 8;

const STOPWORDS: [&str; 14] = [
    "a", "an", "the", "is", "are", "they", "he", "she", "person", "holding", "with", "on", "at", "quite",
];

/// Deterministic stand-in: images are downsampled to 8x8, centred and passed
/// through a fixed Gaussian projection; texts are sums of per-token Gaussian
/// vectors keyed by a hash of the token.
#[derive(Debug, Clone)]
pub struct StubFrozenEncoder {
    dim: usize,
    seed: u64,
    image_proj: Array2<f64>,
}

impl StubFrozenEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("model.embed_dim", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4f42);
        let n = (3 * STUB_SIDE * STUB_SIDE) as usize;
        let image_proj = Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng));
        Ok(StubFrozenEncoder { dim, seed, image_proj })
    }

    fn token_vector(&self, token: &str) -> Array1<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let bytes: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(bytes);
        Array1::from_shape_fn(self.dim, |_| StandardNormal.sample(&mut rng))
    }

    fn image_raw(&self, img: &RgbImage) -> Array1<f64> {
        let small = resize(img, STUB_SIDE, STUB_SIDE, FilterType::Triangle);
        let mut v = Array1::from_iter(small.as_raw().iter().map(|&b| b as f64 / 255.0));
        let mean = v.mean().unwrap_or(0.0);
        v -= mean;
        v.dot(&self.image_proj)
    }

    fn text_raw(&self, text: &str) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim);
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .filter(|t| !STOPWORDS.contains(&t.as_str()))
        {
            acc += &self.token_vector(&token);
        }
        acc
    }
}

fn stack(rows: Vec<Array1<f64>>, dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.into_iter().enumerate() {
        m.row_mut(i).assign(&r);
    }
    m
}

impl FrozenEncoder for StubFrozenEncoder {
    fn name(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_images(&self, images: &[RgbImage]) -> Result<EmbeddingBatch> {
        if images.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let raw = stack(images.iter().map(|i| self.image_raw(i)).collect(), self.dim);
        EmbeddingBatch::new(normalize_rows(raw.view()).0, Modality::Vision)
    }

    fn encode_texts(&self, texts: &[String]) -> Result<EmbeddingBatch> {
        if texts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let raw = stack(texts.iter().map(|t| self.text_raw(t)).collect(), self.dim);
        EmbeddingBatch::new(normalize_rows(raw.view()).0, Modality::Language)
    }

    fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"stub");
        h.update(self.seed.to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        for v in self.image_proj.iter() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}
