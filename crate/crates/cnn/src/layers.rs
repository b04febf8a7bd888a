//! Layer kernels on row-major `(pixels, channels)` activations.

use crate::real::Real;

/// 3x3 zero-padded patches of an `h x w x c` image: row `y * w + x`,
/// column `(ky * 3 + kx) * c + ch`.
pub fn im2col<R: Real>(x: &[R], h: usize, w: usize, c: usize, col: &mut [R]) {
    assert_eq!(x.len(), h * w * c);
    assert_eq!(col.len(), h * w * 9 * c);
    let row_len = 9 * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &mut col[(y * w + xx) * row_len..][..row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    let dst = &mut row[(ky * 3 + kx) * c..][..c];
                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                        dst.fill(R::zero());
                    } else {
                        let src = (sy as usize * w + sx as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub fn col2im<R: Real>(col: &[R], h: usize, w: usize, c: usize, dx: &mut [R]) {
    assert_eq!(dx.len(), h * w * c);
    assert_eq!(col.len(), h * w * 9 * c);
    dx.fill(R::zero());
    let row_len = 9 * c;
    for y in 0..h {
        for xx in 0..w {
            let row = &col[(y * w + xx) * row_len..][..row_len];
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    for (d, &s) in dx[dst..dst + c].iter_mut().zip(&row[(ky * 3 + kx) * c..][..c]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Per-channel batch statistics of a `(rows, channels)` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    /// Biased variance, used for normalization.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

/// Rows per cache-resident block in the per-channel reductions.
const ROW_BLOCK: usize = 64;
/// Channels accumulated together in registers.
const LANES: usize = 8;

/// Per-channel sums of `f(channel, value)` over the rows of a `(rows, c)`
/// matrix, accumulated in `f64`.
#[inline(always)]
fn channel_sums<R: Real, const K: usize>(z: &[R], c: usize, f: impl Fn(usize, usize) -> [f64; K]) -> [Vec<f64>; K] {
    let mut total: [Vec<f64>; K] = std::array::from_fn(|_| vec![0.0; c]);
    let rows = z.len() / c;
    for r0 in (0..rows).step_by(ROW_BLOCK) {
        let r1 = (r0 + ROW_BLOCK).min(rows);
        let mut cb = 0;
        while cb < c {
            let w = LANES.min(c - cb);
            let mut acc = [[0.0f64; LANES]; K];
            let mut add = |r: usize, j: usize| {
                let v = f(r * c + cb + j, cb + j);
                for (a, v) in acc.iter_mut().zip(v) {
                    a[j] += v;
                }
            };
            if w == LANES {
                for r in r0..r1 {
                    for j in 0..LANES {
                        add(r, j);
                    }
                }
            } else {
                for r in r0..r1 {
                    for j in 0..w {
                        add(r, j);
                    }
                }
            }
            for (t, a) in total.iter_mut().zip(&acc) {
                for j in 0..w {
                    t[cb + j] += a[j];
                }
            }
            cb += w;
        }
    }
    total
}

impl BnStats {
    pub fn compute<R: Real>(z: &[R], channels: usize, eps: f64) -> Self {
        let rows = z.len() / channels;
        let [sum] = channel_sums(z, channels, |i, _| [z[i].as_f64()]);
        let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
        let [sq] = channel_sums(z, channels, |i, ch| {
            let d = z[i].as_f64() - mean[ch];
            [d * d]
        });
        let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Self {
            mean,
            var,
            inv_std,
            count: rows,
        }
    }

    /// Bessel-corrected variance for the running estimate.
    pub fn unbiased_var(&self) -> Vec<f64> {
        let n = self.count as f64;
        let k = if self.count > 1 { n / (n - 1.0) } else { 1.0 };
        self.var.iter().map(|v| v * k).collect()
    }
}

/// `out = gamma * (z - mean) * inv_std + beta`, optionally followed by ReLU.
pub fn bn_apply<R: Real>(z: &[R], gamma: &[R], beta: &[R], mean: &[f64], inv_std: &[f64], relu: bool, out: &mut [R]) {
    let c = gamma.len();
    let scale: Vec<f64> = gamma.iter().zip(inv_std).map(|(g, s)| g.as_f64() * s).collect();
    let shift: Vec<R> = (0..c).map(|i| R::from_f64(beta[i].as_f64() - mean[i] * scale[i])).collect();
    let scale: Vec<R> = scale.into_iter().map(R::from_f64).collect();
    let floor = if relu { R::zero() } else { R::neg_infinity() };
    for (zr, or) in z.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for (((o, &v), &a), &b) in or.iter_mut().zip(zr).zip(&scale).zip(&shift) {
            *o = (v * a + b).max(floor);
        }
    }
}

/// Gradient through batch normalization with batch statistics. `dy` holds
/// the gradient w.r.t. the BN output on entry and w.r.t. `z` on exit.
/// Returns `(dgamma, dbeta)`.
pub fn bn_backward<R: Real>(z: &[R], dy: &mut [R], gamma: &[R], stats: &BnStats) -> (Vec<R>, Vec<R>) {
    let c = gamma.len();
    let [dbeta, dgamma] = {
        let dy: &[R] = dy;
        channel_sums(z, c, |i, ch| {
            let d = dy[i].as_f64();
            [d, d * (z[i].as_f64() - stats.mean[ch]) * stats.inv_std[ch]]
        })
    };
    // dz = k * (m * dy - dbeta - xhat * dgamma), folded into dz = a * dy + b * z + e.
    let m = stats.count as f64;
    let mut a = Vec::with_capacity(c);
    let mut b = Vec::with_capacity(c);
    let mut e = Vec::with_capacity(c);
    for i in 0..c {
        let k = gamma[i].as_f64() * stats.inv_std[i] / m;
        let slope = k * dgamma[i] * stats.inv_std[i];
        a.push(R::from_f64(k * m));
        b.push(R::from_f64(-slope));
        e.push(R::from_f64(slope * stats.mean[i] - k * dbeta[i]));
    }
    for (zr, dr) in z.chunks_exact(c).zip(dy.chunks_exact_mut(c)) {
        for ((((d, &v), &a), &b), &e) in dr.iter_mut().zip(zr).zip(&a).zip(&b).zip(&e) {
            *d = a * *d + b * v + e;
        }
    }
    let cast = |v: Vec<f64>| v.into_iter().map(R::from_f64).collect();
    (cast(dgamma), cast(dbeta))
}

/// Zeroes `grad` wherever the ReLU output `act` is not positive.
pub fn relu_backward<R: Real>(act: &[R], grad: &mut [R]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= R::zero() {
            *g = R::zero();
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax<R: Real>(logits: &[R], classes: usize) -> Vec<R> {
    let mut out = vec![R::zero(); logits.len()];
    for (l, o) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = l.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let e: Vec<f64> = l.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let s: f64 = e.iter().sum();
        for (oi, ei) in o.iter_mut().zip(e) {
            *oi = R::from_f64(ei / s);
        }
    }
    out
}

pub const LOG_FLOOR: f64 = 1e-12;

/// Mean categorical cross-entropy with `log` clamped at [`LOG_FLOOR`].
pub fn cross_entropy<R: Real>(probs: &[R], labels: &[usize], classes: usize) -> f64 {
    let n = labels.len();
    assert_eq!(probs.len(), n * classes, "cross_entropy: shape mismatch");
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[i * classes + y].as_f64().max(LOG_FLOOR).ln())
        .sum();
    total / n as f64
}
