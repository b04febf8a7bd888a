//! Multi-antenna jammer: antenna targeting, attack intervals, barrage and
//! pilot-tone waveforms, and injection into the received grids.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{check_len, Error, Result};
use crate::ofdm::{FrameGrid, SubcarrierMap};
use crate::power::{complex_gaussian, db_to_linear};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JamType {
    /// Gaussian noise over every subcarrier.
    Barrage,
    /// Gaussian noise confined to the pilot subcarriers.
    PilotTone,
}

impl JamType {
    pub const ALL: [JamType; 2] = [JamType::Barrage, JamType::PilotTone];

    pub fn name(self) -> &'static str {
        match self {
            JamType::Barrage => "barrage",
            JamType::PilotTone => "pilot-tone",
        }
    }
}

/// Half-open range of symbol indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackInterval {
    pub start: usize,
    pub end: usize,
}

impl AttackInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn symbols(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// What the attacker is configured to do for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub present: bool,
    pub jam_type: JamType,
    pub sjr_db: f64,
    pub n_attacked: usize,
    pub jammer_tx: usize,
    /// Shortest attack interval as a fraction of the record.
    pub min_interval_fraction: f64,
}

impl AttackScenario {
    pub fn absent() -> Self {
        Self {
            present: false,
            jam_type: JamType::Barrage,
            sjr_db: 0.0,
            n_attacked: 0,
            jammer_tx: 2,
            min_interval_fraction: 0.3,
        }
    }

    /// Two targeted antennas, two jammer antennas, intervals of at least
    /// 30% of the record.
    pub fn jammed(jam_type: JamType, sjr_db: f64) -> Self {
        Self {
            present: true,
            jam_type,
            sjr_db,
            n_attacked: 2,
            jammer_tx: 2,
            min_interval_fraction: 0.3,
        }
    }
}

/// Targets, timing and strength of the attack on one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub present: bool,
    pub jam_type: JamType,
    pub sjr_db: f64,
    /// Attack indicator per receive antenna.
    pub gamma: Vec<bool>,
    /// Attack intervals per receive antenna; empty when not attacked.
    pub intervals: Vec<Vec<AttackInterval>>,
    pub n_attacked: usize,
    pub jammer_tx: usize,
    pub seed: u64,
}

impl AttackPlan {
    pub fn attacked_antennas(&self) -> Vec<usize> {
        self.gamma
            .iter()
            .enumerate()
            .filter_map(|(r, &g)| g.then_some(r))
            .collect()
    }
}

/// Picks `n_attacked` distinct antennas uniformly and, independently per
/// antenna, one contiguous interval whose length is uniform between
/// `min_interval_fraction` of the record and the full record.
pub fn draw_attack_plan(
    scenario: &AttackScenario,
    n_rx: usize,
    n_symbols: usize,
    seed: u64,
) -> Result<AttackPlan> {
    if !scenario.present {
        return Ok(AttackPlan {
            present: false,
            jam_type: scenario.jam_type,
            sjr_db: scenario.sjr_db,
            gamma: vec![false; n_rx],
            intervals: vec![Vec::new(); n_rx],
            n_attacked: 0,
            jammer_tx: scenario.jammer_tx,
            seed,
        });
    }
    if scenario.n_attacked == 0 || scenario.n_attacked > n_rx {
        return Err(Error::Config(format!(
            "cannot attack {} of {n_rx} antennas",
            scenario.n_attacked
        )));
    }
    if scenario.jammer_tx == 0 {
        return Err(Error::Config("jammer needs at least one antenna".into()));
    }
    if !scenario.sjr_db.is_finite() {
        return Err(Error::Config(format!("invalid SJR {} dB", scenario.sjr_db)));
    }
    if n_symbols == 0 || !(0.0..=1.0).contains(&scenario.min_interval_fraction) {
        return Err(Error::Config("invalid attack interval bounds".into()));
    }

    let mut rng = seed::rng(seed);
    let mut targets = sample(&mut rng, n_rx, scenario.n_attacked).into_vec();
    targets.sort_unstable();

    let min_len = ((scenario.min_interval_fraction * n_symbols as f64).ceil() as usize).clamp(1, n_symbols);
    let mut gamma = vec![false; n_rx];
    let mut intervals = vec![Vec::new(); n_rx];
    for &r in &targets {
        gamma[r] = true;
        let len = rng.random_range(min_len..=n_symbols);
        let start = rng.random_range(0..=n_symbols - len);
        intervals[r].push(AttackInterval {
            start,
            end: start + len,
        });
    }

    Ok(AttackPlan {
        present: true,
        jam_type: scenario.jam_type,
        sjr_db: scenario.sjr_db,
        gamma,
        intervals,
        n_attacked: scenario.n_attacked,
        jammer_tx: scenario.jammer_tx,
        seed,
    })
}

/// Jammer transmit grids plus the per-receive-antenna steering gain that
/// lands the configured SJR at each targeted antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct JamGrid {
    pub jam_type: JamType,
    /// One grid per jammer transmit antenna.
    pub per_tx: Vec<FrameGrid>,
    /// Amplitude gain per receive antenna; zero where not attacked.
    pub steering_gain: Vec<f64>,
    /// Subcarriers carrying jamming energy.
    pub occupied: Vec<usize>,
}

fn occupied_bins(jam_type: JamType, map: &SubcarrierMap) -> Result<Vec<usize>> {
    match jam_type {
        JamType::Barrage => Ok((0..map.n_subcarriers).collect()),
        JamType::PilotTone if map.pilot_indices.is_empty() => Err(Error::Config(
            "pilot-tone jamming needs at least one pilot".into(),
        )),
        JamType::PilotTone => Ok(map.pilot_indices.clone()),
    }
}

/// Generates the jamming waveform.
///
/// Jam power is accounted as the mean over all `N` bins, so at equal SJR
/// both waveforms emit the same total power and pilot-tone jamming packs
/// `N / N_p` times more power into each occupied bin. The target at antenna
/// `r` is `reference_powers[r] / 10^(sjr/10)`; the steering gain corrects for
/// the realized attacker channel to that antenna.
pub fn jam_signal(
    plan: &AttackPlan,
    map: &SubcarrierMap,
    n_symbols: usize,
    reference_powers: &[f64],
    attacker_channel: &ChannelRealization,
) -> Result<JamGrid> {
    if !plan.present {
        return Err(Error::Config("no jamming for an absent attacker".into()));
    }
    let n = map.n_subcarriers;
    let n_rx = plan.gamma.len();
    check_len("reference powers", n_rx, reference_powers.len())?;
    check_len("attacker channel tx", plan.jammer_tx, attacker_channel.n_tx)?;
    check_len("attacker channel rx", n_rx, attacker_channel.n_rx)?;
    check_len("attacker channel subcarriers", n, attacker_channel.n_subcarriers)?;

    let occupied = occupied_bins(plan.jam_type, map)?;
    let attacked = plan.attacked_antennas();
    let sjr = db_to_linear(plan.sjr_db);
    let nominal_ref =
        attacked.iter().map(|&r| reference_powers[r]).sum::<f64>() / attacked.len().max(1) as f64;
    let per_bin_var = nominal_ref / sjr * n as f64 / (occupied.len() * plan.jammer_tx) as f64;

    let mut rng = seed::rng(seed::derive(plan.seed, 1));
    let mut per_tx = Vec::with_capacity(plan.jammer_tx);
    for _ in 0..plan.jammer_tx {
        let mut g = FrameGrid::zeros(n_symbols, n);
        for s in 0..n_symbols {
            let row = g.symbol_mut(s);
            for &k in &occupied {
                row[k] = complex_gaussian(&mut rng, per_bin_var);
            }
        }
        per_tx.push(g);
    }

    let mut steering_gain = vec![0.0; n_rx];
    for &r in &attacked {
        let channel_gain: f64 = (0..plan.jammer_tx)
            .map(|t| {
                let h = attacker_channel.response(t, r);
                occupied.iter().map(|&k| h[k].norm_sqr()).sum::<f64>()
            })
            .sum();
        let expected = per_bin_var * channel_gain / n as f64;
        let target = reference_powers[r] / sjr;
        if expected.is_nan() || expected <= 0.0 {
            return Err(Error::Config(format!(
                "attacker channel to antenna {r} has no gain on the jammed bins"
            )));
        }
        steering_gain[r] = (target / expected).sqrt();
    }

    Ok(JamGrid {
        jam_type: plan.jam_type,
        per_tx,
        steering_gain,
        occupied,
    })
}

/// `Y_r += gamma_r * g_r * sum_t J_t H^a_tr` inside each attacked antenna's
/// intervals; every other bin is left untouched.
pub fn inject(
    received: &mut [FrameGrid],
    plan: &AttackPlan,
    jam: &JamGrid,
    attacker_channel: &ChannelRealization,
) -> Result<()> {
    check_len("receive antennas", plan.gamma.len(), received.len())?;
    if !plan.present || plan.gamma.iter().all(|g| !g) {
        return Ok(());
    }
    check_len("jammer grids", attacker_channel.n_tx, jam.per_tx.len())?;
    check_len("steering gains", received.len(), jam.steering_gain.len())?;
    check_len("attacker channel rx", received.len(), attacker_channel.n_rx)?;
    for (r, y) in received.iter_mut().enumerate() {
        if !plan.gamma[r] {
            continue;
        }
        let gain = jam.steering_gain[r];
        for j in &jam.per_tx {
            if !j.same_shape(y) {
                return Err(Error::SizeMismatch {
                    what: "jammer grid",
                    expected: y.values.len(),
                    actual: j.values.len(),
                });
            }
        }
        check_len("attacker channel subcarriers", y.n_subcarriers, attacker_channel.n_subcarriers)?;
        for interval in &plan.intervals[r] {
            if interval.end > y.n_symbols {
                return Err(Error::Config(format!(
                    "attack interval {}..{} exceeds {} symbols",
                    interval.start, interval.end, y.n_symbols
                )));
            }
            for s in interval.symbols() {
                for (t, j) in jam.per_tx.iter().enumerate() {
                    let h = attacker_channel.response(t, r);
                    let row = y.symbol_mut(s);
                    for ((yv, jv), hv) in row.iter_mut().zip(j.symbol(s)).zip(h) {
                        *yv += jv * hv * gain;
                    }
                }
            }
        }
    }
    Ok(())
}
