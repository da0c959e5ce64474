//! Minimal layers with hand-written backward passes, plus optimizers.

mod layers;
mod optim;

pub use layers::{silu, silu_grad, Conv2d, Linear};
pub use optim::{Optimizer, OptimizerConfig};

use sha2::{Digest, Sha256};

/// Access to the parameter tensors of a network, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrite every parameter from a flat buffer in `tensors()` order.
    fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter buffer length mismatch");
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// SHA-256 over the exact bit patterns of every parameter.
    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            h.update((t.len() as u64).to_le_bytes());
            for v in t {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        crate::image::hex_string(&h.finalize())
    }

    fn grad_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other` elementwise; both must have identical layout.
    fn accumulate(&mut self, other: &dyn Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}
