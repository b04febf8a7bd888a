//! Block-fading Rician MIMO channel and additive white Gaussian noise.

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::ofdm::FrameGrid;
use crate::power::{complex_gaussian, db_to_linear};
use crate::seed;

/// Multipath profile: a Rician first tap followed by Rayleigh taps whose
/// power falls off by `tap_decay_db` per tap. Tap powers sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Line-of-sight to scattered power ratio of the first tap. May be
    /// `f64::INFINITY` for a pure line-of-sight tap.
    pub k_factor: f64,
    pub n_taps: usize,
    pub tap_decay_db: f64,
    pub seed: u64,
}

impl ChannelParams {
    /// K = 5, eight taps, 3 dB decay per tap.
    pub fn reference(seed: u64) -> Self {
        Self {
            k_factor: 5.0,
            n_taps: 8,
            tap_decay_db: 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_factor.is_nan() || self.k_factor < 0.0 {
            return Err(Error::Config(format!("invalid K factor {}", self.k_factor)));
        }
        if self.n_taps == 0 {
            return Err(Error::Config("channel needs at least one tap".into()));
        }
        if !self.tap_decay_db.is_finite() || self.tap_decay_db < 0.0 {
            return Err(Error::Config(format!(
                "invalid tap decay {} dB",
                self.tap_decay_db
            )));
        }
        Ok(())
    }

    /// Normalized tap powers.
    pub fn tap_powers(&self) -> Vec<f64> {
        let ratio = db_to_linear(-self.tap_decay_db);
        let raw: Vec<f64> = (0..self.n_taps).map(|l| ratio.powi(l as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|p| p / total).collect()
    }
}

/// Taps and frequency response of every (tx, rx) link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_taps: usize,
    pub n_subcarriers: usize,
    /// Row-major `(tx, rx, tap)`.
    pub taps: Vec<Complex64>,
    /// Row-major `(tx, rx, subcarrier)`.
    pub freq_response: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn taps(&self, tx: usize, rx: usize) -> &[Complex64] {
        let start = (tx * self.n_rx + rx) * self.n_taps;
        &self.taps[start..start + self.n_taps]
    }

    pub fn response(&self, tx: usize, rx: usize) -> &[Complex64] {
        let start = (tx * self.n_rx + rx) * self.n_subcarriers;
        &self.freq_response[start..start + self.n_subcarriers]
    }

    /// Builds a realization from explicit taps, computing `H(k)` as the
    /// length-N DFT of the zero-padded taps.
    pub fn from_taps(
        n_tx: usize,
        n_rx: usize,
        n_taps: usize,
        n_subcarriers: usize,
        taps: Vec<Complex64>,
    ) -> Result<Self> {
        check_len("channel taps", n_tx * n_rx * n_taps, taps.len())?;
        if n_taps > n_subcarriers {
            return Err(Error::Config(format!(
                "{n_taps} taps exceed {n_subcarriers} subcarriers"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_subcarriers);
        let mut freq_response = vec![Complex64::new(0.0, 0.0); n_tx * n_rx * n_subcarriers];
        for (link, chunk) in freq_response.chunks_exact_mut(n_subcarriers).enumerate() {
            chunk[..n_taps].copy_from_slice(&taps[link * n_taps..(link + 1) * n_taps]);
        }
        fft.process(&mut freq_response);
        Ok(Self {
            n_tx,
            n_rx,
            n_taps,
            n_subcarriers,
            taps,
            freq_response,
        })
    }

    /// A flat channel with the given per-link gain on every subcarrier.
    pub fn flat(n_tx: usize, n_rx: usize, n_subcarriers: usize, gain: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut taps = Vec::with_capacity(n_tx * n_rx);
        for t in 0..n_tx {
            for r in 0..n_rx {
                taps.push(gain(t, r));
            }
        }
        Self::from_taps(n_tx, n_rx, 1, n_subcarriers, taps).expect("flat channel dimensions")
    }
}

/// Draws one block-fading realization for all `n_tx x n_rx` links.
pub fn draw_channel(
    params: &ChannelParams,
    n_tx: usize,
    n_rx: usize,
    n_subcarriers: usize,
) -> Result<ChannelRealization> {
    params.validate()?;
    if params.n_taps > n_subcarriers {
        return Err(Error::Config(format!(
            "{} taps exceed {} subcarriers",
            params.n_taps, n_subcarriers
        )));
    }
    let mut rng = seed::rng(params.seed);
    let powers = params.tap_powers();
    let (los, scatter) = if params.k_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        let k = params.k_factor;
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };

    let mut taps = Vec::with_capacity(n_tx * n_rx * params.n_taps);
    for _ in 0..n_tx * n_rx {
        for (l, &p) in powers.iter().enumerate() {
            let tap = if l == 0 {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                Complex64::from_polar(los, theta) + complex_gaussian(&mut rng, 1.0) * scatter
            } else {
                complex_gaussian(&mut rng, 1.0)
            };
            taps.push(tap * p.sqrt());
        }
    }
    ChannelRealization::from_taps(n_tx, n_rx, params.n_taps, n_subcarriers, taps)
}

/// `Y_r(k) = sum_t X_t(k) H_tr(k)` for every symbol.
pub fn apply_channel(tx: &[FrameGrid], ch: &ChannelRealization) -> Result<Vec<FrameGrid>> {
    check_len("transmit antennas", ch.n_tx, tx.len())?;
    let (n_symbols, n) = match tx.first() {
        Some(g) => (g.n_symbols, g.n_subcarriers),
        None => return Err(Error::Config("no transmit grids".into())),
    };
    check_len("grid subcarriers", ch.n_subcarriers, n)?;
    for g in tx {
        check_len("transmit grid symbols", n_symbols, g.n_symbols)?;
        check_len("transmit grid subcarriers", n, g.n_subcarriers)?;
    }

    let mut out = Vec::with_capacity(ch.n_rx);
    for r in 0..ch.n_rx {
        let mut y = FrameGrid::zeros(n_symbols, n);
        for (t, x) in tx.iter().enumerate() {
            let h = ch.response(t, r);
            for (y_row, x_row) in y.values.chunks_exact_mut(n).zip(x.values.chunks_exact(n)) {
                for ((yv, xv), hv) in y_row.iter_mut().zip(x_row).zip(h) {
                    *yv += xv * hv;
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// Receiver noise level. `snr_db = +inf` disables noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub snr_db: f64,
}

impl NoiseParams {
    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
        }
    }

    /// Per-bin noise variance relative to `reference_power`.
    pub fn variance(&self, reference_power: f64) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            reference_power / db_to_linear(self.snr_db)
        }
    }
}

/// Adds i.i.d. complex Gaussian noise to every bin of `grid`.
pub fn add_noise<R: Rng + ?Sized>(
    grid: &mut FrameGrid,
    noise: &NoiseParams,
    reference_power: f64,
    rng: &mut R,
) -> Result<()> {
    if noise.snr_db.is_nan() || noise.snr_db == f64::NEG_INFINITY {
        return Err(Error::Config(format!("invalid SNR {} dB", noise.snr_db)));
    }
    if noise.snr_db == f64::INFINITY {
        return Ok(());
    }
    if reference_power.is_nan() || reference_power <= 0.0 {
        return Err(Error::Config(format!(
            "reference power must be positive, got {reference_power}"
        )));
    }
    let variance = noise.variance(reference_power);
    for v in grid.values.iter_mut() {
        *v += complex_gaussian(rng, variance);
    }
    Ok(())
}
