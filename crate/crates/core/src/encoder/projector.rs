use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embedding::{normalize_rows, EmbeddingBatch, Modality};
use super::params::Parameters;
use crate::error::{Error, Result};

/// `normalize(relu(F W1 + b1) W2)`: maps encoder features into a target space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    /// When false `b1` is held at zero, making the map positively homogeneous.
    pub hidden_bias: bool,
}

pub struct ProjectorCache {
    input: Array2<f64>,
    hidden_pre: Array2<f64>,
}

impl Projector {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let n1 = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("positive std");
        Projector {
            w1: Array2::from_shape_fn((in_dim, hidden), |_| n1.sample(rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((hidden, out_dim), |_| n2.sample(rng)),
            hidden_bias: true,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_params(0.0);
        z
    }

    fn check(&self, features: &ArrayView2<f64>) -> Result<()> {
        if features.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "projector expects {} features, got {}",
                self.in_dim(),
                features.ncols()
            )));
        }
        Ok(())
    }

    /// Pre-normalization output and the cache for [`Projector::backward`].
    pub fn forward_raw(&self, features: ArrayView2<f64>) -> Result<(Array2<f64>, ProjectorCache)> {
        self.check(&features)?;
        let mut hidden_pre = features.dot(&self.w1);
        if self.hidden_bias {
            hidden_pre += &self.b1;
        }
        let out = hidden_pre.mapv(|v| v.max(0.0)).dot(&self.w2);
        Ok((
            out,
            ProjectorCache {
                input: features.to_owned(),
                hidden_pre,
            },
        ))
    }

    /// Unit-norm embeddings of a feature batch.
    pub fn embed(&self, features: ArrayView2<f64>, modality: Modality) -> Result<EmbeddingBatch> {
        let (raw, _) = self.forward_raw(features)?;
        EmbeddingBatch::new(normalize_rows(raw.view()).0, modality)
    }

    /// Accumulates gradients given `d loss / d raw output`; returns `d loss / d features`.
    pub fn backward(&self, cache: &ProjectorCache, grad_out: ArrayView2<f64>, grads: &mut Projector) -> Array2<f64> {
        let hidden = cache.hidden_pre.mapv(|v| v.max(0.0));
        grads.w2 += &hidden.t().dot(&grad_out);
        let mut dh = grad_out.dot(&self.w2.t());
        dh.zip_mut_with(&cache.hidden_pre, |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0
            }
        });
        grads.w1 += &cache.input.t().dot(&dh);
        if self.hidden_bias {
            grads.b1 += &dh.sum_axis(Axis(0));
        }
        dh.dot(&self.w1.t())
    }
}

impl Parameters for Projector {
    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.w2.as_slice().expect("contiguous"),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w2.as_slice_mut().expect("contiguous"),
        ]
    }
}
