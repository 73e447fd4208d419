use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EncoderScale, RunConfig};
use crate::data::{SkeletonLayout, StreamKind};
use crate::encoder::{hex, FeatureNorm, Parameters, Projector, SkeletonEncoder, SkeletonEncoderConfig, TemperatureParam};
use crate::error::Result;

/// Trainable state: skeleton encoder, the feature normalization feeding both
/// projectors, one projector per target space and the temperatures. Frozen
/// encoders are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2vlModel {
    pub stream: StreamKind,
    pub encoder: SkeletonEncoder,
    pub feature_norm: FeatureNorm,
    pub proj_vision: Projector,
    pub proj_language: Projector,
    pub tau_vision: TemperatureParam,
    /// Mirrors `tau_vision` unless temperatures are per branch.
    pub tau_language: TemperatureParam,
}

pub fn encoder_config(cfg: &RunConfig, layout: &SkeletonLayout, bodies: usize) -> SkeletonEncoderConfig {
    match cfg.model.encoder {
        EncoderScale::Desk => SkeletonEncoderConfig::desk(layout.clone(), bodies),
        EncoderScale::Full => SkeletonEncoderConfig::full(layout.clone(), bodies),
    }
}

impl C2vlModel {
    pub fn new(cfg: &RunConfig, layout: &SkeletonLayout, bodies: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder = SkeletonEncoder::new(encoder_config(cfg, layout, bodies), rng)?;
        let f = encoder.feature_dim();
        let (h, d) = (cfg.model.projector_hidden, cfg.model.embed_dim);
        let proj_vision = Projector::new(f, h, d, rng);
        let proj_language = Projector::new(f, h, d, rng);
        let tau = TemperatureParam::new(cfg.temperature.init, cfg.temperature.mode)?;
        Ok(C2vlModel {
            stream: cfg.data.stream,
            feature_norm: FeatureNorm::new(f),
            encoder,
            proj_vision,
            proj_language,
            tau_vision: tau,
            tau_language: tau,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_params(0.0);
        z
    }

    /// Digest over trainable weights, running feature statistics and temperatures.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(Parameters::digest(self).as_bytes());
        for v in self.feature_norm.running_mean.iter().chain(&self.feature_norm.running_var) {
            h.update(v.to_le_bytes());
        }
        h.update(self.tau_vision.log_tau.to_le_bytes());
        h.update(self.tau_language.log_tau.to_le_bytes());
        hex(&h.finalize())
    }
}

impl Parameters for C2vlModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.encoder.params();
        p.extend(self.proj_vision.params());
        p.extend(self.proj_language.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.proj_vision.params_mut());
        p.extend(self.proj_language.params_mut());
        p
    }
}
