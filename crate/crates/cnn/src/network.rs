use rand::Rng;
use rayon::prelude::*;
use satjam_core::seed;

use crate::arch::{Architecture, BN_EPS, BN_MOMENTUM, KERNEL};
use crate::error::{shape_err, CnnError, Result};
use crate::conv::{self, PackedKernel};
use crate::layers::{bn_apply, bn_backward, relu_backward, softmax, BnStats};
use crate::params::{slot, Params, RunningStats};
use crate::real::{gemm, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; dropout driven by the seed, or disabled with `None`.
    Train { dropout_seed: Option<u64> },
    /// Running statistics, no dropout.
    Eval,
}

/// Intermediates of a training-mode forward pass.
#[derive(Debug, Clone)]
struct Cache<R> {
    x: Vec<R>,
    z1: Vec<R>,
    a1: Vec<R>,
    st1: BnStats,
    z2: Vec<R>,
    a2: Vec<R>,
    st2: BnStats,
    /// fc1 output after ReLU and dropout.
    d: Vec<R>,
    /// Dropout multipliers (0 or `1 / keep`); `None` when disabled.
    mask: Option<Vec<R>>,
}

/// Output of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Forward<R> {
    pub batch: usize,
    pub classes: usize,
    pub logits: Vec<R>,
    /// Row-major `(batch, classes)`.
    pub probs: Vec<R>,
    cache: Option<Cache<R>>,
}

impl<R: Real> Forward<R> {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs
            .chunks_exact(self.classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, R::neg_infinity()), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect()
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Buffers carried from one training step to the next, so that large
/// activations and gradients are not re-allocated every batch.
#[derive(Debug, Default)]
pub struct Workspace<R> {
    pool: Vec<Vec<R>>,
    grads: Option<Params<R>>,
}

impl<R: Real> Workspace<R> {
    pub fn new() -> Self {
        Self { pool: Vec::new(), grads: None }
    }

    /// A zeroed buffer of `len` values, reusing a pooled one when possible.
    fn take(&mut self, len: usize) -> Vec<R> {
        let best = self
            .pool
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= len)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i);
        let mut v = match best {
            Some(i) => self.pool.swap_remove(i),
            None => Vec::with_capacity(len),
        };
        v.clear();
        v.resize(len, R::zero());
        v
    }

    fn give(&mut self, v: Vec<R>) {
        self.pool.push(v);
    }

    /// Returns the buffers of a finished pass to the pool.
    pub fn recycle(&mut self, fwd: Forward<R>) {
        if let Some(c) = fwd.cache {
            for v in [c.x, c.z1, c.a1, c.z2, c.a2] {
                self.give(v);
            }
        }
    }

    /// Gradient written by the last [`Network::backward_in`].
    pub fn grads(&self) -> Option<&Params<R>> {
        self.grads.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<R> {
    pub arch: Architecture,
    pub params: Params<R>,
    pub running: RunningStats<R>,
}

fn conv_forward<R: Real>(x: &[R], w: &[R], hw: (usize, usize), cin: usize, cout: usize, z: &mut [R]) {
    let (h, wd) = hw;
    let px = h * wd;
    let kernel = PackedKernel::new(w, cin, cout);
    z.par_chunks_mut(px * cout)
        .zip(x.par_chunks(px * cin))
        .for_each(|(zb, xb)| conv::forward(xb, h, wd, &kernel, zb));
}

/// Returns the kernel gradient; writes the input gradient when `dx` is given.
fn conv_backward<R: Real>(
    x: &[R],
    dz: &[R],
    w: &[R],
    hw: (usize, usize),
    cin: usize,
    cout: usize,
    dx: Option<&mut [R]>,
) -> Vec<R> {
    let (h, wd) = hw;
    let px = h * wd;
    let k = KERNEL * KERNEL * cin;
    if let Some(dx) = dx {
        let flipped = PackedKernel::transposed(w, cin, cout);
        dx.par_chunks_mut(px * cin)
            .zip(dz.par_chunks(px * cout))
            .for_each(|(dxb, dzb)| conv::forward(dzb, h, wd, &flipped, dxb));
    }
    let per_sample: Vec<Vec<R>> = x
        .par_chunks(px * cin)
        .zip(dz.par_chunks(px * cout))
        .map(|(xb, dzb)| {
            let mut dw = vec![R::zero(); k * cout];
            conv::accumulate_weight_grad(xb, dzb, h, wd, cin, cout, &mut dw);
            dw
        })
        .collect();
    // Summed in sample order so the result does not depend on scheduling.
    let mut total = vec![R::zero(); k * cout];
    for dw in per_sample {
        for (t, v) in total.iter_mut().zip(dw) {
            *t += v;
        }
    }
    total
}

fn dense_forward<R: Real>(x: &[R], w: &[R], b: &[R], n: usize, fan_in: usize, fan_out: usize) -> Vec<R> {
    let mut out: Vec<R> = b.iter().copied().cycle().take(n * fan_out).collect();
    gemm(false, false, n, fan_out, fan_in, R::one(), x, w, R::one(), &mut out);
    out
}

fn column_sums<R: Real>(m: &[R], cols: usize) -> Vec<R> {
    let mut s = vec![R::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (a, &v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}

impl<R: Real> Network<R> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            params: Params::init(&arch, seed),
            running: RunningStats::new(&arch),
            arch,
        })
    }

    pub fn from_parts(arch: Architecture, params: Params<R>, running: RunningStats<R>) -> Result<Self> {
        arch.validate()?;
        params.check_shapes(&arch)?;
        running.check_shapes(&arch)?;
        Ok(Self { arch, params, running })
    }

    pub fn convert<S: Real>(&self) -> Network<S> {
        Network {
            arch: self.arch,
            params: self.params.convert(),
            running: self.running.convert(),
        }
    }

    /// Runs `n` row-major `(h, w, c)` inputs stored back to back in `x`.
    pub fn forward(&self, x: &[R], n: usize, mode: Mode) -> Result<Forward<R>> {
        self.forward_in(x, n, mode, &mut Workspace::new())
    }

    /// [`Network::forward`] drawing its buffers from `ws`.
    pub fn forward_in(&self, x: &[R], n: usize, mode: Mode, ws: &mut Workspace<R>) -> Result<Forward<R>> {
        let a = &self.arch;
        let (h, w, cin) = a.input;
        if n == 0 || x.len() != n * a.input_len() {
            return shape_err("network input", (n, h, w, cin), x.len());
        }
        let p = &self.params.tensors;
        let px = a.pixels();
        let train = matches!(mode, Mode::Train { .. });

        let mut z1 = ws.take(n * px * a.conv1);
        conv_forward(x, &p[slot::CONV1_W], (h, w), cin, a.conv1, &mut z1);
        let (st1, mean1, inv1) = self.bn_stats(&z1, a.conv1, train, &self.running.mean1, &self.running.var1);
        let mut a1 = ws.take(z1.len());
        bn_apply(&z1, &p[slot::BN1_GAMMA], &p[slot::BN1_BETA], &mean1, &inv1, true, &mut a1);

        let mut z2 = ws.take(n * px * a.conv2);
        conv_forward(&a1, &p[slot::CONV2_W], (h, w), a.conv1, a.conv2, &mut z2);
        let (st2, mean2, inv2) = self.bn_stats(&z2, a.conv2, train, &self.running.mean2, &self.running.var2);
        let mut a2 = ws.take(z2.len());
        bn_apply(&z2, &p[slot::BN2_GAMMA], &p[slot::BN2_BETA], &mean2, &inv2, true, &mut a2);

        let flat = px * a.conv2;
        let mut d = dense_forward(&a2, &p[slot::FC1_W], &p[slot::FC1_B], n, flat, a.fc1);
        for v in d.iter_mut() {
            *v = v.max(R::zero());
        }
        let mask = match mode {
            Mode::Train {
                dropout_seed: Some(s),
            } if a.dropout > 0.0 => {
                let mut rng = seed::rng(s);
                let keep = R::from_f64(1.0 / (1.0 - a.dropout));
                let m: Vec<R> = (0..d.len())
                    .map(|_| if rng.random::<f64>() < a.dropout { R::zero() } else { keep })
                    .collect();
                for (v, &k) in d.iter_mut().zip(&m) {
                    *v *= k;
                }
                Some(m)
            }
            _ => None,
        };

        let logits = dense_forward(&d, &p[slot::FC2_W], &p[slot::FC2_B], n, a.fc1, a.classes);
        let probs = softmax(&logits, a.classes);
        let cache = if train {
            let mut xc = ws.take(x.len());
            xc.copy_from_slice(x);
            Some(Cache {
                x: xc,
                z1,
                a1,
                st1: st1.expect("train mode computes batch statistics"),
                z2,
                a2,
                st2: st2.expect("train mode computes batch statistics"),
                d,
                mask,
            })
        } else {
            for v in [z1, a1, z2, a2] {
                ws.give(v);
            }
            None
        };
        Ok(Forward {
            batch: n,
            classes: a.classes,
            logits,
            probs,
            cache,
        })
    }

    fn bn_stats(
        &self,
        z: &[R],
        channels: usize,
        train: bool,
        run_mean: &[R],
        run_var: &[R],
    ) -> (Option<BnStats>, Vec<f64>, Vec<f64>) {
        if train {
            let s = BnStats::compute(z, channels, BN_EPS);
            let (m, i) = (s.mean.clone(), s.inv_std.clone());
            (Some(s), m, i)
        } else {
            let m = run_mean.iter().map(|v| v.as_f64()).collect();
            let i = run_var.iter().map(|v| 1.0 / (v.as_f64() + BN_EPS).sqrt()).collect();
            (None, m, i)
        }
    }

    /// Gradient of the mean cross-entropy w.r.t. every parameter, through
    /// the batch statistics and the recorded dropout mask.
    pub fn backward(&self, fwd: &Forward<R>, labels: &[usize]) -> Result<Params<R>> {
        let mut ws = Workspace::new();
        self.backward_in(fwd, labels, &mut ws)?;
        Ok(ws.grads.take().expect("backward_in stores the gradient"))
    }

    /// [`Network::backward`] writing the gradient into `ws` (see
    /// [`Workspace::grads`]) and drawing scratch buffers from it.
    pub fn backward_in(&self, fwd: &Forward<R>, labels: &[usize], ws: &mut Workspace<R>) -> Result<()> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| CnnError::State("backward needs a training-mode forward pass".into()))?;
        let a = &self.arch;
        let n = fwd.batch;
        if labels.len() != n {
            return shape_err("labels", n, labels.len());
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= a.classes) {
            return Err(CnnError::Config(format!("label {bad} outside {} classes", a.classes)));
        }
        let p = &self.params.tensors;
        let (h, w, cin) = a.input;
        let flat = a.flat_len();
        let mut g = match ws.grads.take() {
            Some(g) if g.check_shapes(a).is_ok() => g,
            _ => Params::zeros(a),
        };

        let inv_n = R::from_f64(1.0 / n as f64);
        let mut dlogits = fwd.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            dlogits[i * a.classes + y] -= R::one();
        }
        for v in dlogits.iter_mut() {
            *v *= inv_n;
        }

        gemm(true, false, a.fc1, a.classes, n, R::one(), &cache.d, &dlogits, R::zero(), &mut g.tensors[slot::FC2_W]);
        g.tensors[slot::FC2_B] = column_sums(&dlogits, a.classes);
        let mut dh = vec![R::zero(); n * a.fc1];
        gemm(false, true, n, a.fc1, a.classes, R::one(), &dlogits, &p[slot::FC2_W], R::zero(), &mut dh);
        match &cache.mask {
            Some(m) => {
                for ((v, &k), &out) in dh.iter_mut().zip(m).zip(&cache.d) {
                    *v = if out > R::zero() { *v * k } else { R::zero() };
                }
            }
            None => relu_backward(&cache.d, &mut dh),
        }

        gemm(true, false, flat, a.fc1, n, R::one(), &cache.a2, &dh, R::zero(), &mut g.tensors[slot::FC1_W]);
        g.tensors[slot::FC1_B] = column_sums(&dh, a.fc1);
        let mut dz2 = ws.take(n * flat);
        gemm(false, true, n, flat, a.fc1, R::one(), &dh, &p[slot::FC1_W], R::zero(), &mut dz2);

        relu_backward(&cache.a2, &mut dz2);
        let (dg2, db2) = bn_backward(&cache.z2, &mut dz2, &p[slot::BN2_GAMMA], &cache.st2);
        g.tensors[slot::BN2_GAMMA] = dg2;
        g.tensors[slot::BN2_BETA] = db2;

        let mut dz1 = ws.take(cache.a1.len());
        g.tensors[slot::CONV2_W] =
            conv_backward(&cache.a1, &dz2, &p[slot::CONV2_W], (h, w), a.conv1, a.conv2, Some(&mut dz1));
        ws.give(dz2);

        relu_backward(&cache.a1, &mut dz1);
        let (dg1, db1) = bn_backward(&cache.z1, &mut dz1, &p[slot::BN1_GAMMA], &cache.st1);
        g.tensors[slot::BN1_GAMMA] = dg1;
        g.tensors[slot::BN1_BETA] = db1;
        g.tensors[slot::CONV1_W] = conv_backward(&cache.x, &dz1, &p[slot::CONV1_W], (h, w), cin, a.conv1, None);
        ws.give(dz1);
        ws.grads = Some(g);
        Ok(())
    }

    /// Folds the batch statistics of a training pass into the running
    /// estimates (momentum 0.1, unbiased variance).
    pub fn absorb_batch_stats(&mut self, fwd: &Forward<R>) -> Result<()> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| CnnError::State("no batch statistics in an evaluation pass".into()))?;
        let blend = |run: &mut [R], batch: &[f64]| {
            for (r, &b) in run.iter_mut().zip(batch) {
                *r = R::from_f64((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * b);
            }
        };
        blend(&mut self.running.mean1, &cache.st1.mean);
        blend(&mut self.running.var1, &cache.st1.unbiased_var());
        blend(&mut self.running.mean2, &cache.st2.mean);
        blend(&mut self.running.var2, &cache.st2.unbiased_var());
        Ok(())
    }

    pub fn predict(&self, x: &[R], n: usize) -> Result<Vec<usize>> {
        Ok(self.forward(x, n, Mode::Eval)?.predictions())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::cross_entropy;

    fn tiny() -> Architecture {
        Architecture {
            input: (5, 4, 2),
            conv1: 3,
            conv2: 2,
            fc1: 6,
            classes: 2,
            dropout: 0.5,
        }
    }

    fn inputs(n: usize, arch: &Architecture, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        (0..n * arch.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn probabilities_are_normalized() {
        let arch = tiny();
        let net: Network<f64> = Network::new(arch, 1).unwrap();
        let x = inputs(7, &arch, 2);
        for mode in [Mode::Eval, Mode::Train { dropout_seed: Some(3) }] {
            let f = net.forward(&x, 7, mode).unwrap();
            for row in f.probs.chunks(2) {
                assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_final_layer_gives_uniform_output() {
        let arch = tiny();
        let mut net: Network<f64> = Network::new(arch, 1).unwrap();
        net.params.tensors[slot::FC2_W].fill(0.0);
        let f = net.forward(&inputs(3, &arch, 4), 3, Mode::Eval).unwrap();
        assert!(f.probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net: Network<f32> = Network::new(tiny(), 1).unwrap();
        assert!(matches!(net.forward(&[0.0; 10], 1, Mode::Eval), Err(CnnError::Shape { .. })));
    }

    #[test]
    fn backward_needs_a_training_pass() {
        let arch = tiny();
        let net: Network<f64> = Network::new(arch, 1).unwrap();
        let f = net.forward(&inputs(2, &arch, 1), 2, Mode::Eval).unwrap();
        assert!(matches!(net.backward(&f, &[0, 1]), Err(CnnError::State(_))));
    }

    #[test]
    fn final_layer_gradient_is_p_minus_y() {
        let arch = tiny();
        let net: Network<f64> = Network::new(arch, 5).unwrap();
        let n = 4;
        let labels = [0, 1, 1, 0];
        let f = net.forward(&inputs(n, &arch, 6), n, Mode::Train { dropout_seed: None }).unwrap();
        let g = net.backward(&f, &labels).unwrap();
        // The fc2 bias gradient is the batch mean of p - y.
        for c in 0..2 {
            let want: f64 = (0..n)
                .map(|i| f.probs[i * 2 + c] - f64::from(labels[i] == c))
                .sum::<f64>()
                / n as f64;
            assert!((g.tensors[slot::FC2_B][c] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_correct_batch_has_vanishing_gradient() {
        let arch = tiny();
        let mut net: Network<f64> = Network::new(arch, 5).unwrap();
        net.params.tensors[slot::FC2_W].fill(0.0);
        net.params.tensors[slot::FC2_B].copy_from_slice(&[-60.0, 60.0]);
        let f = net.forward(&inputs(4, &arch, 6), 4, Mode::Train { dropout_seed: None }).unwrap();
        let g = net.backward(&f, &[1, 1, 1, 1]).unwrap();
        assert!(g.norm() < 1e-6, "gradient norm {}", g.norm());
        assert!(cross_entropy(&f.probs, &[1, 1, 1, 1], 2) < 1e-12);
    }

    #[test]
    fn train_mode_batch_norm_standardizes_activations() {
        let arch = tiny();
        let net: Network<f64> = Network::new(arch, 8).unwrap();
        let n = 16;
        let x = inputs(n, &arch, 9);
        let mut z1 = vec![0.0; n * 20 * 3];
        conv_forward(&x, &net.params.tensors[slot::CONV1_W], (5, 4), 2, 3, &mut z1);
        let st = BnStats::compute(&z1, 3, BN_EPS);
        let mut y = vec![0.0; z1.len()];
        bn_apply(&z1, &[1.0; 3], &[0.0; 3], &st.mean, &st.inv_std, false, &mut y);
        let after = BnStats::compute(&y, 3, 0.0);
        for c in 0..3 {
            assert!(after.mean[c].abs() < 1e-6);
            assert!((after.var[c] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn dropout_masks_half_the_units_and_scales_by_two() {
        let arch = Architecture { fc1: 200, ..tiny() };
        let net: Network<f64> = Network::new(arch, 1).unwrap();
        let n = 50;
        let f = net.forward(&inputs(n, &arch, 2), n, Mode::Train { dropout_seed: Some(7) }).unwrap();
        let mask = f.cache.as_ref().unwrap().mask.as_ref().unwrap();
        let dropped = mask.iter().filter(|&&m| m == 0.0).count() as f64 / mask.len() as f64;
        assert!((dropped - 0.5).abs() < 0.05, "dropped fraction {dropped}");
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn eval_mode_skips_dropout() {
        let arch = tiny();
        let net: Network<f64> = Network::new(arch, 1).unwrap();
        let x = inputs(3, &arch, 2);
        let a = net.forward(&x, 3, Mode::Eval).unwrap();
        let b = net.forward(&x, 3, Mode::Eval).unwrap();
        assert_eq!(a.probs, b.probs);
        assert!(!a.has_cache());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let arch = tiny();
        let mut net: Network<f64> = Network::new(arch, 1).unwrap();
        let f = net.forward(&inputs(4, &arch, 2), 4, Mode::Train { dropout_seed: None }).unwrap();
        let st = f.cache.as_ref().unwrap().st1.clone();
        net.absorb_batch_stats(&f).unwrap();
        for c in 0..3 {
            assert!((net.running.mean1[c] - 0.1 * st.mean[c]).abs() < 1e-15);
            assert!((net.running.var1[c] - (0.9 + 0.1 * st.unbiased_var()[c])).abs() < 1e-15);
        }
    }
}
