use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-5;

/// Affine-free batch normalization of pooled encoder features.
///
/// Training uses batch statistics; inference uses the running averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
}

/// Batch statistics and normalized activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FeatureNormCache {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    xhat: Array2<f64>,
    inv: Array1<f64>,
}

impl FeatureNorm {
    pub fn new(dim: usize) -> Self {
        FeatureNorm {
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    /// Normalizes with the statistics of `features` itself.
    pub fn forward_batch(&self, features: ArrayView2<f64>) -> (Array2<f64>, FeatureNormCache) {
        let n = features.nrows().max(1) as f64;
        let mean = features.sum_axis(Axis(0)) / n;
        let centred = &features - &mean;
        let var = centred.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        let xhat = &centred * &inv;
        (xhat.clone(), FeatureNormCache { mean, var, xhat, inv })
    }

    /// `d loss / d features` given `d loss / d normalized`.
    pub fn backward(&self, cache: &FeatureNormCache, grad: ArrayView2<f64>) -> Array2<f64> {
        let n = grad.nrows().max(1) as f64;
        let gm = grad.sum_axis(Axis(0)) / n;
        let gx = (&grad * &cache.xhat).sum_axis(Axis(0)) / n;
        (&grad - &gm - &(&cache.xhat * &gx)) * &cache.inv
    }

    /// Exponential moving update of the running statistics.
    pub fn update(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + mean * m;
        self.running_var = &self.running_var * (1.0 - m) + var * m;
    }

    /// Running standard deviation used at inference.
    pub fn scale(&self) -> Array1<f64> {
        self.running_var.mapv(|v| (v + EPS).sqrt())
    }

    /// Normalizes with the running statistics.
    pub fn apply(&self, features: ArrayView2<f64>) -> Array2<f64> {
        (&features - &self.running_mean) / &self.scale()
    }
}
