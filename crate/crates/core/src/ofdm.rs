//! Legitimate MIMO-OFDM transmitter: subcarrier map, BPSK + comb-pilot
//! frequency grids, and the IDFT/CP path to time domain and back.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Link dimensions of the legitimate system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkParams {
    pub n_subcarriers: usize,
    pub n_data_subcarriers: usize,
    pub n_pilots: usize,
    pub pilot_spacing: usize,
    /// Offset of the first pilot from the start of the active block.
    pub pilot_offset: usize,
    pub cp_len: usize,
    pub symbols_per_frame: usize,
    pub n_frames: usize,
    pub n_tx: usize,
    pub n_rx: usize,
}

impl LinkParams {
    /// The reference parameter set: 1024 subcarriers, 705 data, 88 pilots
    /// every 8 bins, CP 64, 10 frames of 60 symbols, 2 transmit antennas.
    pub fn reference(n_rx: usize) -> Self {
        Self {
            n_subcarriers: 1024,
            n_data_subcarriers: 705,
            n_pilots: 88,
            pilot_spacing: 8,
            pilot_offset: 4,
            cp_len: 64,
            symbols_per_frame: 60,
            n_frames: 10,
            n_tx: 2,
            n_rx,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subcarriers", self.n_subcarriers),
            ("pilot_spacing", self.pilot_spacing),
            ("symbols_per_frame", self.symbols_per_frame),
            ("n_frames", self.n_frames),
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_active() == 0 {
            return Err(Error::Config("no active subcarriers".into()));
        }
        if self.n_active() > self.n_subcarriers {
            return Err(Error::Config(format!(
                "{} active subcarriers exceed N = {}",
                self.n_active(),
                self.n_subcarriers
            )));
        }
        if self.cp_len >= self.n_subcarriers {
            return Err(Error::Config("cyclic prefix must be shorter than N".into()));
        }
        if self.n_pilots > 0 && self.pilot_offset >= self.pilot_spacing {
            return Err(Error::Config("pilot offset must be below pilot spacing".into()));
        }
        Ok(())
    }

    pub fn n_active(&self) -> usize {
        self.n_pilots + self.n_data_subcarriers
    }

    /// OFDM symbols in one record (all frames).
    pub fn n_symbols(&self) -> usize {
        self.symbols_per_frame * self.n_frames
    }

    /// Samples per OFDM symbol including the cyclic prefix.
    pub fn symbol_len(&self) -> usize {
        self.n_subcarriers + self.cp_len
    }

    /// Data bits carried per transmit antenna in one record.
    pub fn bits_per_antenna(&self) -> usize {
        self.n_symbols() * self.n_data_subcarriers
    }
}

/// Partition of the subcarrier index range into pilot, data and null bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcarrierMap {
    pub n_subcarriers: usize,
    pub active_start: usize,
    pub pilot_indices: Vec<usize>,
    pub data_indices: Vec<usize>,
    pub null_indices: Vec<usize>,
}

impl SubcarrierMap {
    /// Pilot and data bins in increasing order.
    pub fn active_indices(&self) -> Vec<usize> {
        let mut active: Vec<usize> = self
            .pilot_indices
            .iter()
            .chain(&self.data_indices)
            .copied()
            .collect();
        active.sort_unstable();
        active
    }

    pub fn n_active(&self) -> usize {
        self.pilot_indices.len() + self.data_indices.len()
    }
}

/// Places a contiguous active block centred in `[0, N)` (so it never
/// touches the DC bin 0) and lays comb pilots inside it at
/// `active_start + pilot_offset + spacing * m`.
pub fn build_subcarrier_map(params: &LinkParams) -> Result<SubcarrierMap> {
    params.validate()?;
    let n = params.n_subcarriers;
    let active = params.n_active();
    if active + 1 > n {
        return Err(Error::Config(format!(
            "{active} active bins plus a DC null do not fit N = {n}"
        )));
    }
    let active_start = ((n - active) / 2).max(1);
    let active_end = active_start + active;
    if active_end > n {
        return Err(Error::Config(format!(
            "active block [{active_start}, {active_end}) exceeds N = {n}"
        )));
    }

    let pilot_indices: Vec<usize> = (0..params.n_pilots)
        .map(|m| active_start + params.pilot_offset + params.pilot_spacing * m)
        .collect();
    if let Some(&last) = pilot_indices.last() {
        if last >= active_end {
            return Err(Error::Config(format!(
                "pilot comb ends at bin {last}, outside the active block ending at {active_end}"
            )));
        }
    }

    let mut is_pilot = vec![false; n];
    for &k in &pilot_indices {
        is_pilot[k] = true;
    }
    let data_indices: Vec<usize> = (active_start..active_end).filter(|&k| !is_pilot[k]).collect();
    let null_indices: Vec<usize> = (0..active_start).chain(active_end..n).collect();

    Ok(SubcarrierMap {
        n_subcarriers: n,
        active_start,
        pilot_indices,
        data_indices,
        null_indices,
    })
}

/// Frequency-domain symbols of one antenna, row-major `(symbol, subcarrier)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub values: Vec<Complex64>,
}

impl FrameGrid {
    pub fn zeros(n_symbols: usize, n_subcarriers: usize) -> Self {
        Self {
            n_symbols,
            n_subcarriers,
            values: vec![Complex64::new(0.0, 0.0); n_symbols * n_subcarriers],
        }
    }

    pub fn symbol(&self, s: usize) -> &[Complex64] {
        let n = self.n_subcarriers;
        &self.values[s * n..(s + 1) * n]
    }

    pub fn symbol_mut(&mut self, s: usize) -> &mut [Complex64] {
        let n = self.n_subcarriers;
        &mut self.values[s * n..(s + 1) * n]
    }

    pub fn get(&self, s: usize, k: usize) -> Complex64 {
        self.values[s * self.n_subcarriers + k]
    }

    pub fn same_shape(&self, other: &FrameGrid) -> bool {
        self.n_symbols == other.n_symbols && self.n_subcarriers == other.n_subcarriers
    }
}

/// Time-domain samples of one antenna: `n_symbols` blocks of `N + cp_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub cp_len: usize,
    pub samples: Vec<Complex64>,
}

impl TimeSignal {
    pub fn symbol_len(&self) -> usize {
        self.n_subcarriers + self.cp_len
    }

    pub fn symbol(&self, s: usize) -> &[Complex64] {
        let len = self.symbol_len();
        &self.samples[s * len..(s + 1) * len]
    }
}

pub const DEFAULT_PILOT: Complex64 = Complex64::new(1.0, 0.0);

/// Maps bits onto the grid: `false -> +1`, `true -> -1` on data bins in
/// `data_indices` order, `pilot_value` on pilot bins, zero elsewhere.
pub fn modulate_frame(
    bits: &[bool],
    map: &SubcarrierMap,
    params: &LinkParams,
    pilot_value: Complex64,
) -> Result<FrameGrid> {
    let n_symbols = params.n_symbols();
    let per_symbol = map.data_indices.len();
    check_len("modulate_frame bits", n_symbols * per_symbol, bits.len())?;

    let mut grid = FrameGrid::zeros(n_symbols, map.n_subcarriers);
    for s in 0..n_symbols {
        let sym_bits = &bits[s * per_symbol..(s + 1) * per_symbol];
        let row = grid.symbol_mut(s);
        for &k in &map.pilot_indices {
            row[k] = pilot_value;
        }
        for (&k, &b) in map.data_indices.iter().zip(sym_bits) {
            row[k] = Complex64::new(if b { -1.0 } else { 1.0 }, 0.0);
        }
    }
    Ok(grid)
}

/// Hard-decision BPSK demapping of the data bins.
pub fn demodulate_frame(grid: &FrameGrid, map: &SubcarrierMap) -> Vec<bool> {
    let mut bits = Vec::with_capacity(grid.n_symbols * map.data_indices.len());
    for s in 0..grid.n_symbols {
        let row = grid.symbol(s);
        bits.extend(map.data_indices.iter().map(|&k| row[k].re < 0.0));
    }
    bits
}

fn check_grid(grid: &FrameGrid, params: &LinkParams) -> Result<()> {
    check_len("grid subcarriers", params.n_subcarriers, grid.n_subcarriers)?;
    check_len("grid symbols", params.n_symbols(), grid.n_symbols)?;
    check_len(
        "grid values",
        grid.n_symbols * grid.n_subcarriers,
        grid.values.len(),
    )
}

/// Inverse DFT of every symbol, scaled by `1/sqrt(N)`, with the last
/// `cp_len` samples prepended as cyclic prefix.
pub fn to_time_domain(grid: &FrameGrid, params: &LinkParams) -> Result<TimeSignal> {
    check_grid(grid, params)?;
    let n = params.n_subcarriers;
    let cp = params.cp_len;
    let scale = 1.0 / (n as f64).sqrt();
    let ifft = FftPlanner::new().plan_fft_inverse(n);

    let mut body = grid.values.clone();
    ifft.process(&mut body);

    let mut samples = Vec::with_capacity(grid.n_symbols * (n + cp));
    for sym in body.chunks_exact(n) {
        samples.extend(sym[n - cp..].iter().map(|v| v * scale));
        samples.extend(sym.iter().map(|v| v * scale));
    }
    Ok(TimeSignal {
        n_symbols: grid.n_symbols,
        n_subcarriers: n,
        cp_len: cp,
        samples,
    })
}

/// Strips the cyclic prefix and applies the forward DFT scaled by `1/sqrt(N)`.
pub fn from_time_domain(signal: &TimeSignal, params: &LinkParams) -> Result<FrameGrid> {
    let n = params.n_subcarriers;
    let cp = params.cp_len;
    check_len(
        "time signal samples",
        params.n_symbols() * (n + cp),
        signal.samples.len(),
    )?;
    let scale = 1.0 / (n as f64).sqrt();
    let fft = FftPlanner::new().plan_fft_forward(n);

    let mut values = Vec::with_capacity(params.n_symbols() * n);
    for sym in signal.samples.chunks_exact(n + cp) {
        values.extend_from_slice(&sym[cp..]);
    }
    fft.process(&mut values);
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(FrameGrid {
        n_symbols: params.n_symbols(),
        n_subcarriers: n,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_params(n_symbols: usize) -> LinkParams {
        LinkParams {
            n_subcarriers: 64,
            n_data_subcarriers: 32,
            n_pilots: 4,
            pilot_spacing: 8,
            pilot_offset: 4,
            cp_len: 8,
            symbols_per_frame: n_symbols,
            n_frames: 1,
            n_tx: 2,
            n_rx: 4,
        }
    }

    fn random_grid(params: &LinkParams, seed: u64) -> FrameGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = FrameGrid::zeros(params.n_symbols(), params.n_subcarriers);
        for v in g.values.iter_mut() {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        g
    }

    #[test]
    fn reference_map_counts() {
        let map = build_subcarrier_map(&LinkParams::reference(4)).unwrap();
        assert_eq!(map.data_indices.len(), 705);
        assert_eq!(map.pilot_indices.len(), 88);
        assert_eq!(map.null_indices.len(), 231);
        assert!(map.null_indices.contains(&0));
        // Constant stride d, offset 4 from the block start.
        assert_eq!(map.pilot_indices[0], map.active_start + 4);
        for w in map.pilot_indices.windows(2) {
            assert_eq!(w[1] - w[0], 8);
        }
    }

    #[test]
    fn no_pilot_map_is_all_data() {
        let mut p = LinkParams::reference(4);
        p.n_data_subcarriers = 793;
        p.n_pilots = 0;
        let map = build_subcarrier_map(&p).unwrap();
        assert!(map.pilot_indices.is_empty());
        assert_eq!(map.data_indices.len(), 793);
        assert_eq!(map.data_indices, map.active_indices());
    }

    #[test]
    fn small_map_matches_enumeration() {
        let p = small_params(1);
        let map = build_subcarrier_map(&p).unwrap();
        // Enumerate every bin and apply the placement rule directly.
        let start = (64 - 36) / 2;
        let mut pilots = Vec::new();
        let mut data = Vec::new();
        let mut nulls = Vec::new();
        for k in 0..64 {
            let in_block = k >= start && k < start + 36;
            let rel = k as isize - start as isize;
            if in_block && rel >= 4 && (rel - 4) % 8 == 0 && (rel - 4) / 8 < 4 {
                pilots.push(k);
            } else if in_block {
                data.push(k);
            } else {
                nulls.push(k);
            }
        }
        assert_eq!(map.pilot_indices, pilots);
        assert_eq!(map.pilot_indices, vec![18, 26, 34, 42]);
        assert_eq!(map.data_indices, data);
        assert_eq!(map.null_indices, nulls);
    }

    #[test]
    fn oversized_active_block_is_rejected() {
        let mut p = small_params(1);
        p.n_data_subcarriers = 60;
        assert!(matches!(build_subcarrier_map(&p), Err(Error::Config(_))));
        // Pilot comb longer than the block.
        let mut p = small_params(1);
        p.n_pilots = 5;
        p.n_data_subcarriers = 1;
        assert!(matches!(build_subcarrier_map(&p), Err(Error::Config(_))));
    }

    #[test]
    fn zero_bits_map_to_plus_one() {
        let p = LinkParams::reference(4);
        let map = build_subcarrier_map(&p).unwrap();
        let bits = vec![false; p.bits_per_antenna()];
        let grid = modulate_frame(&bits, &map, &p, DEFAULT_PILOT).unwrap();
        for s in [0, 299, 599] {
            for &k in &map.data_indices {
                assert_eq!(grid.get(s, k), Complex64::new(1.0, 0.0));
            }
            for &k in &map.null_indices {
                assert_eq!(grid.get(s, k), Complex64::new(0.0, 0.0));
            }
            for &k in &map.pilot_indices {
                assert_eq!(grid.get(s, k), DEFAULT_PILOT);
            }
        }
    }

    #[test]
    fn alternating_bits_follow_data_order() {
        let p = small_params(2);
        let map = build_subcarrier_map(&p).unwrap();
        let bits: Vec<bool> = (0..p.bits_per_antenna()).map(|i| i % 2 == 0).collect();
        let grid = modulate_frame(&bits, &map, &p, DEFAULT_PILOT).unwrap();
        let row: Vec<f64> = map.data_indices.iter().map(|&k| grid.get(0, k).re).collect();
        for (i, v) in row.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { -1.0 } else { 1.0 });
        }
    }

    #[test]
    fn wrong_bit_count_is_rejected() {
        let p = small_params(2);
        let map = build_subcarrier_map(&p).unwrap();
        let err = modulate_frame(&[true; 3], &map, &p, DEFAULT_PILOT).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { .. }));
    }

    #[test]
    fn modulated_active_power_is_unity() {
        let p = LinkParams::reference(4);
        let map = build_subcarrier_map(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bits: Vec<bool> = (0..p.bits_per_antenna()).map(|_| rng.random()).collect();
        let grid = modulate_frame(&bits, &map, &p, DEFAULT_PILOT).unwrap();
        let active = map.active_indices();
        let mut acc = 0.0;
        for s in 0..grid.n_symbols {
            for &k in &active {
                acc += grid.get(s, k).norm_sqr();
            }
        }
        let mean = acc / (grid.n_symbols * active.len()) as f64;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn modulate_demodulate_round_trip() {
        let p = LinkParams::reference(4);
        let map = build_subcarrier_map(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bits: Vec<bool> = (0..p.bits_per_antenna()).map(|_| rng.random()).collect();
        let grid = modulate_frame(&bits, &map, &p, DEFAULT_PILOT).unwrap();
        let decoded = demodulate_frame(&grid, &map);
        assert_eq!(&decoded[..1000], &bits[..1000]);
        assert_eq!(decoded, bits);
        // Through the time domain as well.
        let back = from_time_domain(&to_time_domain(&grid, &p).unwrap(), &p).unwrap();
        assert_eq!(demodulate_frame(&back, &map), bits);
    }

    #[test]
    fn unit_tone_at_dc_is_constant() {
        let p = small_params(1);
        let mut g = FrameGrid::zeros(1, 64);
        g.values[0] = Complex64::new(1.0, 0.0);
        let t = to_time_domain(&g, &p).unwrap();
        for v in &t.samples {
            assert!((v - Complex64::new(1.0 / 8.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn all_ones_grid_is_an_impulse() {
        let p = small_params(1);
        let mut g = FrameGrid::zeros(1, 64);
        g.values.iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        let t = to_time_domain(&g, &p).unwrap();
        let body = &t.samples[p.cp_len..];
        assert!((body[0] - Complex64::new(8.0, 0.0)).norm() < 1e-12);
        for v in &body[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn cyclic_prefix_copies_symbol_tail() {
        let p = small_params(3);
        let t = to_time_domain(&random_grid(&p, 3), &p).unwrap();
        for s in 0..3 {
            let sym = t.symbol(s);
            assert_eq!(&sym[..p.cp_len], &sym[p.n_subcarriers..]);
        }
    }

    #[test]
    fn zero_signal_gives_zero_grid() {
        let p = small_params(2);
        let t = TimeSignal {
            n_symbols: 2,
            n_subcarriers: 64,
            cp_len: 8,
            samples: vec![Complex64::new(0.0, 0.0); 2 * 72],
        };
        let g = from_time_domain(&t, &p).unwrap();
        assert!(g.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn short_signal_is_rejected() {
        let p = small_params(2);
        let t = TimeSignal {
            n_symbols: 2,
            n_subcarriers: 64,
            cp_len: 8,
            samples: vec![Complex64::new(0.0, 0.0); 100],
        };
        assert!(matches!(
            from_time_domain(&t, &p),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn idft_matches_naive_sum() {
        let p = small_params(1);
        let g = random_grid(&p, 17);
        let t = to_time_domain(&g, &p).unwrap();
        let n = 64;
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let ang = 2.0 * PI * (k * i) as f64 / n as f64;
                acc += g.values[k] * Complex64::from_polar(1.0, ang);
            }
            acc /= (n as f64).sqrt();
            assert!((t.samples[p.cp_len + i] - acc).norm() < 1e-12);
        }
    }

    #[test]
    fn circular_shift_gives_phase_ramp() {
        let p = small_params(1);
        let g = random_grid(&p, 23);
        let t = to_time_domain(&g, &p).unwrap();
        let shift = 5;
        let n = 64;
        let body = &t.samples[p.cp_len..];
        let shifted: Vec<Complex64> = (0..n).map(|i| body[(i + n - shift) % n]).collect();
        let mut samples = shifted[n - p.cp_len..].to_vec();
        samples.extend_from_slice(&shifted);
        let ts = TimeSignal {
            samples,
            ..t.clone()
        };
        let gs = from_time_domain(&ts, &p).unwrap();
        for k in 0..n {
            let ramp = Complex64::from_polar(1.0, -2.0 * PI * (k * shift) as f64 / n as f64);
            assert!((gs.values[k] - g.values[k] * ramp).norm() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn time_domain_round_trip(seed in any::<u64>(), symbols in 1usize..6) {
                let p = small_params(symbols);
                let g = random_grid(&p, seed);
                let back = from_time_domain(&to_time_domain(&g, &p).unwrap(), &p).unwrap();
                let err = g.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                prop_assert!(err < 1e-10);
            }

            #[test]
            fn map_partitions_range(extra_nulls in 2usize..40, n_pilots in 0usize..6, spacing in 2usize..9) {
                let n_data = 40usize.saturating_sub(n_pilots);
                let n_active = n_data + n_pilots;
                let p = LinkParams {
                    n_subcarriers: n_active + extra_nulls,
                    n_data_subcarriers: n_data,
                    n_pilots,
                    pilot_spacing: spacing,
                    pilot_offset: spacing / 2,
                    cp_len: 1,
                    symbols_per_frame: 1,
                    n_frames: 1,
                    n_tx: 1,
                    n_rx: 1,
                };
                if let Ok(map) = build_subcarrier_map(&p) {
                    let mut all: Vec<usize> = map.pilot_indices.iter().chain(&map.data_indices).chain(&map.null_indices).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..p.n_subcarriers).collect::<Vec<_>>());
                    prop_assert!(!map.pilot_indices.contains(&0) && !map.data_indices.contains(&0));
                }
            }
        }
    }
}
