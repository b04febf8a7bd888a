use rand::Rng;
use satjam_core::seed;

use crate::arch::Architecture;
use crate::error::{shape_err, Result};
use crate::real::Real;

/// Index of each trainable tensor inside [`Params`].
pub mod slot {
    pub const CONV1_W: usize = 0;
    pub const BN1_GAMMA: usize = 1;
    pub const BN1_BETA: usize = 2;
    pub const CONV2_W: usize = 3;
    pub const BN2_GAMMA: usize = 4;
    pub const BN2_BETA: usize = 5;
    pub const FC1_W: usize = 6;
    pub const FC1_B: usize = 7;
    pub const FC2_W: usize = 8;
    pub const FC2_B: usize = 9;
    pub const COUNT: usize = 10;
}

/// Trainable tensors (or their gradients / moments) in layer order. Weight
/// matrices are row-major `fan_in x fan_out`; convolution kernels use row
/// index `(ky * 3 + kx) * in_channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<R> {
    pub tensors: Vec<Vec<R>>,
}

impl<R: Real> Params<R> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            tensors: arch
                .param_shapes()
                .iter()
                .map(|&(_, r, c)| vec![R::zero(); r * c])
                .collect(),
        }
    }

    /// Weights uniform in `+-sqrt(6 / fan_in)`, BN scale one, shifts and
    /// biases zero. Draws are taken in layer order from one seeded stream.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut p = Self::zeros(arch);
        for (i, &(_, fan_in, _)) in arch.param_shapes().iter().enumerate() {
            match i {
                slot::CONV1_W | slot::CONV2_W | slot::FC1_W | slot::FC2_W => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in p.tensors[i].iter_mut() {
                        *v = R::from_f64(rng.random_range(-bound..bound));
                    }
                }
                slot::BN1_GAMMA | slot::BN2_GAMMA => p.tensors[i].fill(R::one()),
                _ => {}
            }
        }
        p
    }

    pub fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        let want: Vec<usize> = arch.param_shapes().iter().map(|&(_, r, c)| r * c).collect();
        let got: Vec<usize> = self.tensors.iter().map(Vec::len).collect();
        if want != got {
            return shape_err("parameter tensors", want, got);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// Euclidean norm over every tensor.
    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn convert<S: Real>(&self) -> Params<S> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| t.iter().map(|v| S::from_f64(v.as_f64())).collect())
                .collect(),
        }
    }
}

/// Batch-norm running statistics used in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<R> {
    pub mean1: Vec<R>,
    pub var1: Vec<R>,
    pub mean2: Vec<R>,
    pub var2: Vec<R>,
}

impl<R: Real> RunningStats<R> {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            mean1: vec![R::zero(); arch.conv1],
            var1: vec![R::one(); arch.conv1],
            mean2: vec![R::zero(); arch.conv2],
            var2: vec![R::one(); arch.conv2],
        }
    }

    pub fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        let got = [self.mean1.len(), self.var1.len(), self.mean2.len(), self.var2.len()];
        let want = [arch.conv1, arch.conv1, arch.conv2, arch.conv2];
        if got != want {
            return shape_err("running statistics", want, got);
        }
        Ok(())
    }

    pub fn convert<S: Real>(&self) -> RunningStats<S> {
        let c = |v: &[R]| v.iter().map(|x| S::from_f64(x.as_f64())).collect();
        RunningStats {
            mean1: c(&self.mean1),
            var1: c(&self.var1),
            mean2: c(&self.mean2),
            var2: c(&self.var2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_respects_fan_in_bounds() {
        let arch = Architecture::detector((6, 5, 3));
        let p: Params<f64> = Params::init(&arch, 1);
        p.check_shapes(&arch).unwrap();
        for (i, &(_, fan_in, _)) in arch.param_shapes().iter().enumerate() {
            let t = &p.tensors[i];
            match i {
                slot::BN1_GAMMA | slot::BN2_GAMMA => assert!(t.iter().all(|&v| v == 1.0)),
                slot::CONV1_W | slot::CONV2_W | slot::FC1_W | slot::FC2_W => {
                    let b = (6.0 / fan_in as f64).sqrt();
                    assert!(t.iter().all(|v| v.abs() < b));
                    assert!(t.iter().any(|&v| v != 0.0));
                }
                _ => assert!(t.iter().all(|&v| v == 0.0)),
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let arch = Architecture::detector((4, 4, 2));
        assert_eq!(Params::<f32>::init(&arch, 3), Params::<f32>::init(&arch, 3));
        assert_ne!(Params::<f32>::init(&arch, 3), Params::<f32>::init(&arch, 4));
    }

    #[test]
    fn init_variance_matches_uniform_law() {
        let arch = Architecture::detector((20, 20, 2));
        let p: Params<f64> = Params::init(&arch, 9);
        let w = &p.tensors[slot::FC1_W];
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expected = 6.0 / arch.flat_len() as f64 / 3.0;
        assert!((var / expected - 1.0).abs() < 0.02, "{var} vs {expected}");
    }
}
