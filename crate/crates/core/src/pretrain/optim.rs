use serde::{Deserialize, Serialize};

use crate::encoder::Parameters;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v = μ v + (g + λ w)`, `w -= lr v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per parameter tensor, created on the first step.
    pub buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn step<P: Parameters>(&mut self, model: &mut P, grads: &P, lr: f64) {
        let grads = grads.params();
        let mut params = model.params_mut();
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((w, g), buf) in params.iter_mut().zip(grads).zip(self.buffers.iter_mut()) {
            for ((wi, gi), bi) in w.iter_mut().zip(g).zip(buf.iter_mut()) {
                let d = gi + self.weight_decay * *wi;
                *bi = self.momentum * *bi + d;
                *wi -= lr * *bi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Vec1(Vec<f64>);

    impl Parameters for Vec1 {
        fn params(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn matches_hand_computed_steps() {
        let mut w = Vec1(vec![1.0]);
        let g = Vec1(vec![0.5]);
        let mut opt = Sgd::new(0.9, 0.1);
        opt.step(&mut w, &g, 0.1);
        // v = 0.5 + 0.1 = 0.6, w = 1 - 0.06
        assert!((w.0[0] - 0.94).abs() < 1e-15);
        opt.step(&mut w, &g, 0.1);
        // v = 0.54 + 0.5 + 0.094 = 1.134
        assert!((w.0[0] - (0.94 - 0.1134)).abs() < 1e-15);
    }
}
