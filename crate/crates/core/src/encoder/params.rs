use sha2::{Digest, Sha256};

/// Flat access to a model's trainable tensors, in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// `self += other`, tensor by tensor. Both sides must share a shape.
    fn add_assign_params(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    fn scale_params(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn fill_params(&mut self, value: f64) {
        for p in self.params_mut() {
            p.fill(value);
        }
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for v in p {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
