//! Time-frequency features: per-antenna STFT magnitudes, mean-filter
//! decimation, dB conversion, and stacking into `(T, F, n_rx)` tensors.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::attacker::JamType;
use crate::error::{check_len, Error, Result};
use crate::ofdm::LinkParams;

/// Smallest magnitude fed to the logarithm (-240 dB).
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub n_windows: usize,
    /// Samples spanned by one window.
    pub window: usize,
    pub hop: usize,
    /// DFT length taken inside each window.
    pub dft_len: usize,
    /// Offset of the DFT segment from the window start.
    pub dft_offset: usize,
    /// Mean-filter kernel `(rows, cols)`.
    pub mean_filter: (usize, usize),
    pub pool_stride: (usize, usize),
    pub floor_below_median_db: f64,
    pub ceiling_above_median_db: f64,
}

impl FeatureParams {
    /// One rectangular window per OFDM symbol (hop = window = N + CP, DFT
    /// over the N samples after the prefix), then a 4x4 mean filter with
    /// stride 4, clipped to [median - 60 dB, median + 40 dB].
    pub fn for_link(link: &LinkParams) -> Self {
        let window = link.symbol_len();
        Self {
            n_windows: link.n_symbols(),
            window,
            hop: window,
            dft_len: link.n_subcarriers,
            dft_offset: link.cp_len,
            mean_filter: (4, 4),
            pool_stride: (4, 4),
            floor_below_median_db: 60.0,
            ceiling_above_median_db: 40.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_windows == 0 || self.window == 0 || self.hop == 0 || self.dft_len == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if self.dft_offset + self.dft_len > self.window {
            return Err(Error::Config("DFT segment exceeds the window".into()));
        }
        let (kh, kw) = self.mean_filter;
        let (sh, sw) = self.pool_stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::Config("mean filter and stride must be positive".into()));
        }
        if kh > self.n_windows || kw > self.dft_len {
            return Err(Error::Config("mean filter larger than the spectrogram".into()));
        }
        Ok(())
    }

    pub fn signal_len(&self) -> usize {
        (self.n_windows - 1) * self.hop + self.window
    }

    /// `(T, F)` of one pooled antenna slice.
    pub fn out_shape(&self) -> (usize, usize) {
        let (kh, kw) = self.mean_filter;
        let (sh, sw) = self.pool_stride;
        ((self.n_windows - kh) / sh + 1, (self.dft_len - kw) / sw + 1)
    }
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Grid2 {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_len("grid values", rows * cols, values.len())?;
        Ok(Self { rows, cols, values })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Rectangular-window STFT magnitudes, one row per window, scaled by
/// `1/sqrt(dft_len)` so a unit-power bin reads 1.
pub fn stft_magnitude(samples: &[Complex64], params: &FeatureParams) -> Result<Grid2> {
    params.validate()?;
    check_len("stft input samples", params.signal_len(), samples.len())?;
    let n = params.dft_len;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let scale = 1.0 / (n as f64).sqrt();

    let mut buf = Vec::with_capacity(params.n_windows * n);
    for w in 0..params.n_windows {
        let start = w * params.hop + params.dft_offset;
        buf.extend_from_slice(&samples[start..start + n]);
    }
    fft.process(&mut buf);
    let values = buf.iter().map(|v| v.norm() * scale).collect();
    Grid2::new(params.n_windows, n, values)
}

/// Mean filter with the configured kernel and stride, then `20 log10`.
pub fn smooth_and_pool(grid: &Grid2, params: &FeatureParams) -> Result<Grid2> {
    params.validate()?;
    check_len("spectrogram rows", params.n_windows, grid.rows)?;
    check_len("spectrogram cols", params.dft_len, grid.cols)?;
    let (kh, kw) = params.mean_filter;
    let (sh, sw) = params.pool_stride;
    let (out_rows, out_cols) = params.out_shape();
    let norm = 1.0 / (kh * kw) as f64;

    let mut values = Vec::with_capacity(out_rows * out_cols);
    for i in 0..out_rows {
        for j in 0..out_cols {
            let mut acc = 0.0;
            for r in i * sh..i * sh + kh {
                acc += grid.row(r)[j * sw..j * sw + kw].iter().sum::<f64>();
            }
            let mean = acc * norm;
            values.push(20.0 * mean.max(MAGNITUDE_FLOOR).log10());
        }
    }
    Grid2::new(out_rows, out_cols, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Absent,
    Present,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Absent => 0,
            Label::Present => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Absent),
            1 => Some(Label::Present),
            _ => None,
        }
    }
}

/// Provenance of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scenario: String,
    pub sample_id: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub sjr_db: Option<f64>,
    pub jam_type: Option<JamType>,
}

/// One labelled `(T, F, n_rx)` tensor, antenna index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTensor {
    pub t: usize,
    pub f: usize,
    pub n_rx: usize,
    pub values: Vec<f32>,
    pub label: Label,
    pub meta: SampleMeta,
}

impl SampleTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.t, self.f, self.n_rx)
    }

    pub fn get(&self, t: usize, f: usize, r: usize) -> f32 {
        self.values[(t * self.f + f) * self.n_rx + r]
    }

    /// One antenna slice as a `(T, F)` grid.
    pub fn slice(&self, r: usize) -> Grid2 {
        let values = (0..self.t * self.f)
            .map(|i| self.values[i * self.n_rx + r] as f64)
            .collect();
        Grid2 {
            rows: self.t,
            cols: self.f,
            values,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Stacks the per-antenna dB grids in antenna order and clips the whole
/// sample to `[median - floor_below, median + ceiling_above]`.
pub fn assemble_tensor(
    grids: &[Grid2],
    label: Label,
    meta: SampleMeta,
    params: &FeatureParams,
) -> Result<SampleTensor> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Config("no antenna grids to stack".into()))?;
    let (t, f) = (first.rows, first.cols);
    for g in grids {
        check_len("antenna grid rows", t, g.rows)?;
        check_len("antenna grid cols", f, g.cols)?;
    }
    let n_rx = grids.len();

    let all: Vec<f64> = grids.iter().flat_map(|g| g.values.iter().copied()).collect();
    let mid = median(&all);
    let lo = mid - params.floor_below_median_db;
    let hi = mid + params.ceiling_above_median_db;

    let mut values = vec![0f32; t * f * n_rx];
    for (r, g) in grids.iter().enumerate() {
        for (i, &v) in g.values.iter().enumerate() {
            let v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
            values[i * n_rx + r] = v as f32;
        }
    }
    Ok(SampleTensor {
        t,
        f,
        n_rx,
        values,
        label,
        meta,
    })
}

/// Full featurization of one received record.
pub fn featurize(
    antennas: &[&[Complex64]],
    label: Label,
    meta: SampleMeta,
    params: &FeatureParams,
) -> Result<SampleTensor> {
    let grids = antennas
        .iter()
        .map(|s| stft_magnitude(s, params).and_then(|g| smooth_and_pool(&g, params)))
        .collect::<Result<Vec<_>>>()?;
    assemble_tensor(&grids, label, meta, params)
}
