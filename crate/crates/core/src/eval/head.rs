use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Parameters;
use crate::loss::softmax_rows;
use crate::pretrain::Sgd;

/// Per-feature centring and scaling, fit on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { s } else { 1.0 });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// Fully connected classifier `x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LinearHead {
    pub fn zeros(in_dim: usize, classes: usize) -> Self {
        LinearHead {
            w: Array2::zeros((in_dim, classes)),
            b: Array1::zeros(classes),
        }
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Argmax per row; ties go to the lowest class.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        argmax_rows(self.logits(x).view())
    }

    /// Mean cross-entropy gradient with respect to the logits.
    pub fn logit_grad(&self, logits: ArrayView2<f64>, labels: &[usize]) -> Array2<f64> {
        let mut g = softmax_rows(logits);
        let n = labels.len() as f64;
        for (i, &y) in labels.iter().enumerate() {
            g[[i, y]] -= 1.0;
        }
        g / n
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: ArrayView2<f64>, dlogits: ArrayView2<f64>, grads: &mut LinearHead) -> Array2<f64> {
        grads.w += &x.t().dot(&dlogits);
        grads.b += &dlogits.sum_axis(Axis(0));
        dlogits.dot(&self.w.t())
    }
}

impl Parameters for LinearHead {
    fn params(&self) -> Vec<&[f64]> {
        vec![
            self.w.as_slice().expect("contiguous"),
            self.b.as_slice().expect("contiguous"),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_slice_mut().expect("contiguous"),
            self.b.as_slice_mut().expect("contiguous"),
        ]
    }
}

pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Minibatch SGD settings shared by the head-training protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTraining {
    pub epochs: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub seed: u64,
}

impl HeadTraining {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.gamma.powi(drops as i32)
    }
}

pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64 * 0x2545_F491)));
    order
}

/// Trains a zero-initialized head on fixed (already standardized) features.
pub fn train_head(x: ArrayView2<f64>, labels: &[usize], classes: usize, opts: &HeadTraining) -> LinearHead {
    let mut head = LinearHead::zeros(x.ncols(), classes);
    let mut opt = Sgd::new(opts.momentum, opts.weight_decay);
    for epoch in 0..opts.epochs {
        let lr = opts.lr_at(epoch);
        let order = epoch_order(labels.len(), opts.seed, epoch);
        for chunk in order.chunks(opts.batch.max(1)) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let dl = head.logit_grad(head.logits(xb.view()).view(), &yb);
            let mut g = LinearHead::zeros(x.ncols(), classes);
            head.backward(xb.view(), dl.view(), &mut g);
            opt.step(&mut head, &g, lr);
        }
    }
    head
}
