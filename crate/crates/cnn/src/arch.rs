use serde::{Deserialize, Serialize};

use crate::error::{CnnError, Result};

/// Layer widths of the detector:
/// `conv1 -> BN -> ReLU -> conv2 -> BN -> ReLU -> flatten -> fc1 -> ReLU ->
/// dropout -> fc2 -> softmax`. Convolutions are 3x3, stride 1, zero-padded
/// to keep the spatial size, and carry no bias (batch norm follows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `(height, width, channels)` of one input tensor.
    pub input: (usize, usize, usize),
    pub conv1: usize,
    pub conv2: usize,
    pub fc1: usize,
    pub classes: usize,
    pub dropout: f64,
}

pub const KERNEL: usize = 3;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl Architecture {
    /// 32 and 16 filters, 96 hidden units, two classes, dropout 0.5.
    pub fn detector(input: (usize, usize, usize)) -> Self {
        Self {
            input,
            conv1: 32,
            conv2: 16,
            fc1: 96,
            classes: 2,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input;
        if [h, w, c, self.conv1, self.conv2, self.fc1, self.classes].contains(&0) {
            return Err(CnnError::Config("every layer dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CnnError::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.input.0 * self.input.1
    }

    pub fn input_len(&self) -> usize {
        self.pixels() * self.input.2
    }

    pub fn flat_len(&self) -> usize {
        self.pixels() * self.conv2
    }

    /// Shapes of the trainable tensors in layer order.
    pub fn param_shapes(&self) -> [(&'static str, usize, usize); 10] {
        let k2 = KERNEL * KERNEL;
        [
            ("conv1.weight", k2 * self.input.2, self.conv1),
            ("bn1.gamma", 1, self.conv1),
            ("bn1.beta", 1, self.conv1),
            ("conv2.weight", k2 * self.conv1, self.conv2),
            ("bn2.gamma", 1, self.conv2),
            ("bn2.beta", 1, self.conv2),
            ("fc1.weight", self.flat_len(), self.fc1),
            ("fc1.bias", 1, self.fc1),
            ("fc2.weight", self.fc1, self.classes),
            ("fc2.bias", 1, self.classes),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_parameter_count() {
        let a = Architecture::detector((150, 256, 4));
        let conv1 = 9 * 4 * 32 + 2 * 32;
        let conv2 = 9 * 32 * 16 + 2 * 16;
        let fc1 = 150 * 256 * 16 * 96 + 96;
        let fc2 = 96 * 2 + 2;
        assert_eq!(a.param_count(), conv1 + conv2 + fc1 + fc2);
        assert_eq!(a.param_count(), 58_988_546);
        let b = Architecture::detector((150, 256, 8));
        assert_eq!(b.param_count() - a.param_count(), 9 * 4 * 32);
    }

    #[test]
    fn rejects_degenerate_layers() {
        let mut a = Architecture::detector((4, 4, 1));
        a.conv2 = 0;
        assert!(a.validate().is_err());
        let mut a = Architecture::detector((4, 4, 1));
        a.dropout = 1.0;
        assert!(a.validate().is_err());
    }
}
