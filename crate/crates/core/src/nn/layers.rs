use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Stride-1 convolution with an odd square kernel and zero "same" padding.
///
/// Weight layout is `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// He-style normal init scaled by `gain`; bias zero.
    pub fn random<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut c = Self::zeros(in_channels, out_channels, kernel);
        let std = gain * (2.0 / (in_channels * kernel * kernel) as f64).sqrt();
        for w in &mut c.weight {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
        c
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    fn check_input(&self, input: &Tensor3) -> Result<()> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor3) -> Result<Tensor3> {
        self.check_input(input)?;
        let (h, w) = (input.height(), input.width());
        let mut out = Tensor3::zeros(self.out_channels, h, w);
        let pad = (self.kernel / 2) as isize;
        for o in 0..self.out_channels {
            let plane = out.plane_mut(o);
            plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = input.plane(i);
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let wv = self.weight[self.widx(o, i, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(w, dx);
                        let (y0, y1) = valid_range(h, dy);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let dst_row = &mut plane[y * w + x0..y * w + x1];
                            let sx0 = (x0 as isize + dx) as usize;
                            let src_row = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (d, s) in dst_row.iter_mut().zip(src_row) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to `input` when `want_input` is set.
    pub fn backward(
        &self,
        input: &Tensor3,
        grad_out: &Tensor3,
        grads: &mut Conv2d,
        want_input: bool,
    ) -> Result<Option<Tensor3>> {
        self.check_input(input)?;
        let (h, w) = (input.height(), input.width());
        let pad = (self.kernel / 2) as isize;
        let mut grad_in = want_input.then(|| Tensor3::zeros(self.in_channels, h, w));
        for o in 0..self.out_channels {
            let g = grad_out.plane(o);
            grads.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let src = input.plane(i);
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(w, dx);
                        let idx = self.widx(o, i, ky, kx);
                        let wv = self.weight[idx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let g_row = &g[y * w + x0..y * w + x1];
                            let s_row = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            acc += g_row.iter().zip(s_row).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_in.as_mut() {
                                if wv != 0.0 {
                                    let gi_plane = gi.plane_mut(i);
                                    let gi_row = &mut gi_plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                                    for (d, gv) in gi_row.iter_mut().zip(g_row) {
                                        *d += wv * gv;
                                    }
                                }
                            }
                        }
                        grads.weight[idx] += acc;
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// Output indices `[lo, hi)` whose shifted source index `x + d` stays inside `[0, n)`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Dense `y = W x + b`, weight layout `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let mut l = Self::zeros(in_dim, out_dim);
        let std = gain * (1.0 / in_dim.max(1) as f64).sqrt();
        for w in &mut l.weight {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "linear expects input of length {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        Ok((0..self.out_dim)
            .map(|o| {
                self.bias[o]
                    + self.weight[o * self.in_dim..(o + 1) * self.in_dim]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect())
    }

    /// Parameter gradients only; inputs to linear layers here are constants.
    pub fn backward_params(&self, x: &[f64], grad_out: &[f64], grads: &mut Linear) {
        for (o, &g) in grad_out.iter().enumerate().take(self.out_dim) {
            grads.bias[o] += g;
            for (gw, v) in grads.weight[o * self.in_dim..(o + 1) * self.in_dim]
                .iter_mut()
                .zip(x)
            {
                *gw += g * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of "same" convolution, written independently of the
    /// row-slicing fast path.
    fn conv_oracle(c: &Conv2d, x: &Tensor3) -> Tensor3 {
        let (h, w) = (x.height(), x.width());
        let p = (c.kernel / 2) as isize;
        let mut out = Tensor3::zeros(c.out_channels, h, w);
        for o in 0..c.out_channels {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = c.bias[o];
                    for i in 0..c.in_channels {
                        for ky in 0..c.kernel {
                            for kx in 0..c.kernel {
                                let sy = y as isize + ky as isize - p;
                                let sx = xx as isize + kx as isize - p;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += c.weight[((o * c.in_channels + i) * c.kernel + ky) * c.kernel + kx]
                                        * x.get(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.set(o, y, xx, acc);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [1, 3, 5] {
            let mut c = Conv2d::random(2, 3, k, 1.0, &mut rng);
            c.bias = vec![0.1, -0.2, 0.3];
            let x = Tensor3::randn(2, 4, 6, &mut rng);
            let got = c.forward(&x).unwrap();
            assert!(got.max_abs_diff(&conv_oracle(&c, &x)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = Conv2d::random(2, 2, 3, 1.0, &mut rng);
        let x = Tensor3::randn(2, 3, 4, &mut rng);
        let probe = Tensor3::randn(2, 3, 4, &mut rng);
        let loss = |c: &Conv2d, x: &Tensor3| -> f64 {
            c.forward(x).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut grads = Conv2d::zeros(2, 2, 3);
        let gin = c.backward(&x, &probe, &mut grads, true).unwrap().unwrap();
        let h = 1e-6;
        for idx in 0..c.weight.len() {
            let mut cp = c.clone();
            cp.weight[idx] += h;
            let mut cm = c.clone();
            cm.weight[idx] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grads.weight[idx]).abs() < 1e-6);
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&c, &xp) - loss(&c, &xm)) / (2.0 * h);
            assert!((fd - gin.data()[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn silu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
