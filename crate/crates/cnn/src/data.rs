//! Mini-batch sources and per-sample input standardization.

use satjam_core::dataset::DatasetReader;
use satjam_core::featurizer::{SampleMeta, SampleTensor};

use crate::error::{shape_err, Result};

/// Inputs, labels and metadata of one mini-batch; `x` is `n` standardized
/// `(h, w, c)` tensors back to back.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub x: Vec<f32>,
    pub labels: Vec<usize>,
    pub meta: Vec<SampleMeta>,
}

/// Rescales `values` to zero mean and unit variance over the whole tensor.
/// A constant tensor is only centred.
pub fn standardize(values: &[f32], out: &mut [f32]) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let scale = if var > 1e-24 { 1.0 / var.sqrt() } else { 1.0 };
    for (o, &v) in out.iter_mut().zip(values) {
        *o = ((v as f64 - mean) * scale) as f32;
    }
}

/// Random-access source of labelled samples addressed by position
/// `0..len()`.
pub trait BatchSource: Sync {
    fn len(&self) -> usize;
    fn input_shape(&self) -> (usize, usize, usize);
    fn batch(&self, positions: &[usize]) -> Result<Batch>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn assemble(shape: (usize, usize, usize), samples: &[&SampleTensor]) -> Result<Batch> {
    let len = shape.0 * shape.1 * shape.2;
    let mut x = vec![0f32; samples.len() * len];
    for (s, out) in samples.iter().zip(x.chunks_exact_mut(len)) {
        if s.shape() != shape {
            return shape_err("sample tensor", shape, s.shape());
        }
        standardize(&s.values, out);
    }
    Ok(Batch {
        n: samples.len(),
        x,
        labels: samples.iter().map(|s| s.label.index()).collect(),
        meta: samples.iter().map(|s| s.meta.clone()).collect(),
    })
}

/// Samples held in memory.
pub struct InMemory {
    samples: Vec<SampleTensor>,
    shape: (usize, usize, usize),
}

impl InMemory {
    pub fn new(samples: Vec<SampleTensor>) -> Result<Self> {
        let shape = samples.first().map(SampleTensor::shape).unwrap_or((0, 0, 0));
        if let Some(bad) = samples.iter().find(|s| s.shape() != shape) {
            return shape_err("sample tensor", shape, bad.shape());
        }
        Ok(Self { samples, shape })
    }

    pub fn samples(&self) -> &[SampleTensor] {
        &self.samples
    }
}

impl BatchSource for InMemory {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn batch(&self, positions: &[usize]) -> Result<Batch> {
        let picked: Vec<&SampleTensor> = positions.iter().map(|&p| &self.samples[p]).collect();
        assemble(self.shape, &picked)
    }
}

/// A subset of a dataset file, read on demand.
pub struct DatasetSource<'a> {
    reader: &'a DatasetReader,
    ids: Vec<usize>,
}

impl<'a> DatasetSource<'a> {
    pub fn new(reader: &'a DatasetReader, ids: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= reader.len()) {
            return Err(satjam_core::Error::Config(format!("sample id {bad} out of range")).into());
        }
        Ok(Self { reader, ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

impl BatchSource for DatasetSource<'_> {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        let [t, f, r] = self.reader.manifest().tensor_shape;
        (t, f, r)
    }

    fn batch(&self, positions: &[usize]) -> Result<Batch> {
        let ids: Vec<usize> = positions.iter().map(|&p| self.ids[p]).collect();
        let samples = self.reader.load(&ids)?;
        let refs: Vec<&SampleTensor> = samples.iter().collect();
        assemble(self.input_shape(), &refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_tensor_has_unit_moments() {
        let v: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.37).sin() * 20.0 - 55.0).collect();
        let mut out = vec![0.0; v.len()];
        standardize(&v, &mut out);
        let mean = out.iter().map(|&x| x as f64).sum::<f64>() / 1000.0;
        let var = out.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_tensor_is_centred() {
        let mut out = vec![1.0; 4];
        standardize(&[-30.0; 4], &mut out);
        assert_eq!(out, vec![0.0; 4]);
    }
}
