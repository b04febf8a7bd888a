use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::error::Result;
use crate::params::Params;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-7,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<R> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Params<R>,
    pub v: Params<R>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig, arch: &Architecture) -> Self {
        Self {
            config,
            step: 0,
            m: Params::zeros(arch),
            v: Params::zeros(arch),
        }
    }

    /// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`,
    /// `w <- w - lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut Params<R>, grads: &Params<R>) -> Result<()> {
        let lens: Vec<usize> = params.tensors.iter().map(Vec::len).collect();
        for other in [grads, &self.m, &self.v] {
            let got: Vec<usize> = other.tensors.iter().map(Vec::len).collect();
            if got != lens {
                return crate::error::shape_err("optimizer tensors", &lens, got);
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (R::from_f64(c.beta1), R::from_f64(c.beta2));
        let (one_b1, one_b2) = (R::from_f64(1.0 - c.beta1), R::from_f64(1.0 - c.beta2));
        let corr1 = R::from_f64(1.0 / (1.0 - c.beta1.powi(t)));
        let corr2 = R::from_f64(1.0 / (1.0 - c.beta2.powi(t)));
        let (lr, eps) = (R::from_f64(c.lr), R::from_f64(c.eps));
        const CHUNK: usize = 1 << 16;
        for (((w, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.tensors.iter_mut())
            .zip(self.v.tensors.iter_mut())
        {
            w.par_chunks_mut(CHUNK)
                .zip(g.par_chunks(CHUNK))
                .zip(m.par_chunks_mut(CHUNK))
                .zip(v.par_chunks_mut(CHUNK))
                .for_each(|(((w, g), m), v)| {
                    for i in 0..w.len() {
                        m[i] = flush(b1 * m[i] + one_b1 * g[i]);
                        v[i] = flush(b2 * v[i] + one_b2 * g[i] * g[i]);
                        let m_hat = m[i] * corr1;
                        let v_hat = v[i] * corr2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                });
        }
        Ok(())
    }
}

/// Decaying moments of idle weights would otherwise sink into the subnormal
/// range, where arithmetic is orders of magnitude slower.
#[inline(always)]
fn flush<R: Real>(x: R) -> R {
    if x.is_normal() {
        x
    } else {
        R::zero()
    }
}
