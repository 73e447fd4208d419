//! Reduced spatial-temporal graph convolutional encoder with manual backprop.
//!
//! Each block is a graph convolution over joints (`Â X W + b`) followed by a
//! temporal convolution over frames (kernel `k`, stride `s`). Both are followed
//! by a per-sample normalization over the whole activation map and a ReLU. Features are the
//! global average over frames and joints of the last block.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::data::{derive_stream, SkeletonLayout, SkeletonSequence, StreamKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonEncoderConfig {
    pub layout: SkeletonLayout,
    pub bodies: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub temporal_kernel: usize,
}

impl SkeletonEncoderConfig {
    /// Three-block encoder sized for single-core synthetic runs.
    pub fn desk(layout: SkeletonLayout, bodies: usize) -> Self {
        SkeletonEncoderConfig {
            layout,
            bodies,
            channels: vec![16, 16, 32],
            strides: vec![2, 2, 2],
            temporal_kernel: 5,
        }
    }

    /// The ten-block 64-64-64-64-128-128-128-256-256-256 graph encoder.
    pub fn full(layout: SkeletonLayout, bodies: usize) -> Self {
        SkeletonEncoderConfig {
            layout,
            bodies,
            channels: vec![64, 64, 64, 64, 128, 128, 128, 256, 256, 256],
            strides: vec![1, 1, 1, 1, 2, 1, 1, 2, 1, 1],
            temporal_kernel: 9,
        }
    }

    pub fn in_channels(&self) -> usize {
        3 * self.bodies
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.channels.is_empty() {
            return Err(Error::config("encoder.channels", "need at least one block"));
        }
        if self.channels.len() != self.strides.len() {
            return Err(Error::config("encoder.strides", "one stride per block"));
        }
        if self.strides.iter().any(|&s| s == 0) || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("encoder.channels", "channels and strides must be positive"));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::config("encoder.temporal_kernel", "must be odd"));
        }
        if !(1..=2).contains(&self.bodies) {
            return Err(Error::config("encoder.bodies", "must be 1 or 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBlock {
    pub spatial_w: Array2<f64>,
    pub spatial_b: Array1<f64>,
    pub temporal_w: Array2<f64>,
    pub temporal_b: Array1<f64>,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEncoder {
    pub config: SkeletonEncoderConfig,
    pub adjacency: Array2<f64>,
    pub blocks: Vec<GraphBlock>,
}

/// Activations kept from the forward pass of one sample.
pub struct ForwardCache {
    frames: Vec<usize>,
    inputs: Vec<Array2<f64>>,
    spatial: Vec<NormCache>,
    cols: Vec<Array2<f64>>,
    temporal: Vec<NormCache>,
    last_rows: usize,
}

const NORM_EPS: f64 = 1e-5;

/// Normalized activations and the inverse standard deviation.
struct NormCache {
    normed: Array2<f64>,
    inv_std: f64,
}

/// Normalizes one sample's whole activation map to zero mean and unit
/// variance (a single-group group norm).
fn sample_norm(x: Array2<f64>) -> NormCache {
    let mut normed = x;
    let n = normed.len() as f64;
    let mean = normed.sum() / n;
    normed -= mean;
    let var = normed.iter().map(|v| v * v).sum::<f64>() / n;
    let inv_std = 1.0 / (var + NORM_EPS).sqrt();
    normed *= inv_std;
    NormCache { normed, inv_std }
}

/// Gradient through [`sample_norm`]: `inv_std * (g - mean(g) - x̂ mean(g x̂))`.
fn sample_norm_backward(cache: &NormCache, grad: Array2<f64>) -> Array2<f64> {
    let mut g = grad;
    let n = g.len() as f64;
    let mg = g.sum() / n;
    let mgx = (&g * &cache.normed).sum() / n;
    let inv = cache.inv_std;
    g.zip_mut_with(&cache.normed, |gi, &x| *gi = inv * (*gi - mg - x * mgx));
    g
}

/// Converts a sequence to the `(frames * joints) × (3 * bodies)` encoder input
/// for the requested stream. Bodies are stacked along channels; each channel is
/// centred and the sample scaled to unit RMS.
pub fn prepare_input(seq: &SkeletonSequence, stream: StreamKind, layout: &SkeletonLayout) -> Result<Array2<f64>> {
    let data = derive_stream(seq, stream, layout)?.data;
    let (t, v, c, b) = data.dim();
    let mut x = Array2::<f64>::zeros((t * v, c * b));
    for ti in 0..t {
        for vi in 0..v {
            for bi in 0..b {
                for ci in 0..c {
                    x[[ti * v + vi, bi * c + ci]] = data[[ti, vi, ci, bi]] as f64;
                }
            }
        }
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty input");
    x -= &mean;
    let rms = (x.mapv(|e| e * e).mean().unwrap_or(0.0)).sqrt();
    if rms > 1e-8 {
        x /= rms;
    }
    Ok(x)
}

fn he(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

impl SkeletonEncoder {
    pub fn new(config: SkeletonEncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let adjacency = config.layout.normalized_adjacency();
        let k = config.temporal_kernel;
        let mut c_in = config.in_channels();
        let mut blocks = Vec::new();
        for (&c_out, &stride) in config.channels.iter().zip(&config.strides) {
            blocks.push(GraphBlock {
                spatial_w: he(rng, c_in, c_out, c_in),
                spatial_b: Array1::zeros(c_out),
                temporal_w: he(rng, k * c_out, c_out, k * c_out),
                temporal_b: Array1::zeros(c_out),
                stride,
            });
            c_in = c_out;
        }
        Ok(SkeletonEncoder {
            config,
            adjacency,
            blocks,
        })
    }

    /// A zero-valued copy, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_params(0.0);
        z
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    fn joints(&self) -> usize {
        self.config.layout.joints
    }

    fn check_input(&self, x: &ArrayView2<f64>, id: &str) -> Result<usize> {
        let v = self.joints();
        if x.ncols() != self.config.in_channels() || x.nrows() % v != 0 || x.nrows() == 0 {
            return Err(Error::Batch { ids: vec![id.to_string()] });
        }
        Ok(x.nrows() / v)
    }

    /// Feature vector of one prepared input, without keeping activations.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, ForwardCache)> {
        let mut t = self.check_input(&x, "input")?;
        let v = self.joints();
        let k = self.config.temporal_kernel;
        let mut cache = ForwardCache {
            frames: Vec::new(),
            inputs: Vec::new(),
            spatial: Vec::new(),
            cols: Vec::new(),
            temporal: Vec::new(),
            last_rows: 0,
        };
        let mut h = x.to_owned();
        for block in &self.blocks {
            let u = h.dot(&block.spatial_w);
            let mut y = mix_joints(&self.adjacency, &u, t, v);
            y += &block.spatial_b;
            let y = sample_norm(y);
            let act = y.normed.mapv(relu);
            let t_out = t.div_ceil(block.stride);
            let cols = im2col(&act, t, v, k, block.stride);
            let mut z = cols.dot(&block.temporal_w);
            z += &block.temporal_b;
            let z = sample_norm(z);
            cache.frames.push(t);
            cache.inputs.push(h);
            cache.spatial.push(y);
            cache.cols.push(cols);
            h = z.normed.mapv(relu);
            cache.temporal.push(z);
            t = t_out;
        }
        cache.last_rows = h.nrows();
        let feat = h.mean_axis(Axis(0)).expect("non-empty activations");
        Ok((feat, cache))
    }

    /// Accumulates parameter gradients into `grads` given `d loss / d features`.
    /// Returns the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_feat: &Array1<f64>, grads: &mut SkeletonEncoder) -> Array2<f64> {
        let v = self.joints();
        let k = self.config.temporal_kernel;
        let c_last = grad_feat.len();
        let mut dh = Array2::<f64>::zeros((cache.last_rows, c_last));
        let scale = 1.0 / cache.last_rows as f64;
        for mut row in dh.rows_mut() {
            row.assign(&(grad_feat * scale));
        }
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let g = &mut grads.blocks[bi];
            let t = cache.frames[bi];
            let dz = sample_norm_backward(&cache.temporal[bi], dh * &cache.temporal[bi].normed.mapv(relu_grad));
            g.temporal_w += &cache.cols[bi].t().dot(&dz);
            g.temporal_b += &dz.sum_axis(Axis(0));
            let dcols = dz.dot(&block.temporal_w.t());
            let dact = col2im(&dcols, t, v, k, block.stride);
            let dy = sample_norm_backward(&cache.spatial[bi], dact * cache.spatial[bi].normed.mapv(relu_grad));
            g.spatial_b += &dy.sum_axis(Axis(0));
            // Â is symmetric, so its transpose is itself
            let du = mix_joints(&self.adjacency, &dy, t, v);
            g.spatial_w += &cache.inputs[bi].t().dot(&du);
            dh = du.dot(&block.spatial_w.t());
        }
        dh
    }
}

impl Parameters for SkeletonEncoder {
    fn params(&self) -> Vec<&[f64]> {
        self.blocks
            .iter()
            .flat_map(|b| {
                [
                    b.spatial_w.as_slice().expect("contiguous"),
                    b.spatial_b.as_slice().expect("contiguous"),
                    b.temporal_w.as_slice().expect("contiguous"),
                    b.temporal_b.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    b.spatial_w.as_slice_mut().expect("contiguous"),
                    b.spatial_b.as_slice_mut().expect("contiguous"),
                    b.temporal_w.as_slice_mut().expect("contiguous"),
                    b.temporal_b.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn relu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Applies the joint adjacency to every frame: `out[t] = Â · x[t]`.
fn mix_joints(adj: &Array2<f64>, x: &Array2<f64>, t: usize, v: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(x.raw_dim());
    for ti in 0..t {
        let rows = s![ti * v..(ti + 1) * v, ..];
        ndarray::linalg::general_mat_mul(1.0, adj, &x.slice(rows), 0.0, &mut out.slice_mut(rows));
    }
    out
}

/// Unfolds `k` temporal taps (zero padded, centred) into columns:
/// `cols[(to, v), tap * C + c] = x[to * stride + tap - k/2, v, c]`.
fn im2col(x: &Array2<f64>, t: usize, v: usize, k: usize, stride: usize) -> Array2<f64> {
    let c = x.ncols();
    let t_out = t.div_ceil(stride);
    let pad = k / 2;
    let mut cols = Array2::<f64>::zeros((t_out * v, k * c));
    for to in 0..t_out {
        for tap in 0..k {
            let src = (to * stride + tap) as isize - pad as isize;
            if src < 0 || src as usize >= t {
                continue;
            }
            let src = src as usize;
            cols.slice_mut(s![to * v..(to + 1) * v, tap * c..(tap + 1) * c])
                .assign(&x.slice(s![src * v..(src + 1) * v, ..]));
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, t: usize, v: usize, k: usize, stride: usize) -> Array2<f64> {
    let c = cols.ncols() / k;
    let t_out = t.div_ceil(stride);
    let pad = k / 2;
    let mut x = Array2::<f64>::zeros((t * v, c));
    for to in 0..t_out {
        for tap in 0..k {
            let src = (to * stride + tap) as isize - pad as isize;
            if src < 0 || src as usize >= t {
                continue;
            }
            let src = src as usize;
            let mut dst = x.slice_mut(s![src * v..(src + 1) * v, ..]);
            dst += &cols.slice(s![to * v..(to + 1) * v, tap * c..(tap + 1) * c]);
        }
    }
    x
}
