//! Power measurement helpers shared by the SNR/SJR calibration paths.

use std::ops::Range;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ofdm::FrameGrid;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Mean `|x|^2` over the given symbols and bins.
pub fn mean_power(grid: &FrameGrid, symbols: Range<usize>, bins: &[usize]) -> f64 {
    let count = symbols.len() * bins.len();
    if count == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for s in symbols {
        let row = grid.symbol(s);
        acc += bins.iter().map(|&k| row[k].norm_sqr()).sum::<f64>();
    }
    acc / count as f64
}

/// Mean `|x|^2` over all bins of the given symbols.
pub fn mean_power_all_bins(grid: &FrameGrid, symbols: Range<usize>) -> f64 {
    let n = grid.n_subcarriers;
    let slice = &grid.values[symbols.start * n..symbols.end * n];
    if slice.is_empty() {
        return 0.0;
    }
    slice.iter().map(|v| v.norm_sqr()).sum::<f64>() / slice.len() as f64
}

/// Per-antenna mean received power over the whole record on `active` bins.
pub fn antenna_powers(grids: &[FrameGrid], active: &[usize]) -> Vec<f64> {
    grids
        .iter()
        .map(|g| mean_power(g, 0..g.n_symbols, active))
        .collect()
}

/// Antenna-averaged active-bin power; the SNR reference level.
pub fn reference_power(grids: &[FrameGrid], active: &[usize]) -> f64 {
    let powers = antenna_powers(grids, active);
    powers.iter().sum::<f64>() / powers.len().max(1) as f64
}

/// Circularly-symmetric complex Gaussian sample with `E|z|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db_round_trip() {
        for db in [-20.0, -3.0, 0.0, 5.0, 25.0] {
            assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_power_of_constant_grid() {
        let mut g = FrameGrid::zeros(4, 8);
        g.values.iter_mut().for_each(|v| *v = Complex64::new(0.0, 2.0));
        assert_eq!(mean_power(&g, 1..3, &[0, 5, 7]), 4.0);
        assert_eq!(mean_power_all_bins(&g, 0..4), 4.0);
        assert_eq!(mean_power(&g, 2..2, &[1]), 0.0);
    }
}
