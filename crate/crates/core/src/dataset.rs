//! Dataset orchestration: scenario grids, per-sample seeds, the end-to-end
//! signal chain, the binary tensor file with its JSON manifest, and
//! stratified train/test splits.
//!
//! # Binary layout (version 1, little-endian)
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SATJAMDS"
//! 8       4     format version (u32)
//! 12      4     T (u32)
//! 16      4     F (u32)
//! 20      4     n_rx (u32)
//! 24      8     sample count (u64)
//! 32      ...   count * T * F * n_rx IEEE-754 f32, each sample row-major
//!               (t, f, rx) with the antenna index fastest
//! ```
//!
//! The manifest (`<name>.manifest.json`) carries the scenario, signal-chain
//! parameters, one record per sample and the SHA-256 of the binary file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacker::{
    draw_attack_plan, inject, jam_signal, AttackInterval, AttackPlan, AttackScenario, JamGrid, JamType,
};
use crate::channel::{add_noise, apply_channel, draw_channel, ChannelParams, NoiseParams};
use crate::error::{check_len, Error, Result};
use crate::featurizer::{featurize, FeatureParams, Label, SampleMeta, SampleTensor};
use crate::ofdm::{build_subcarrier_map, modulate_frame, to_time_domain, FrameGrid, LinkParams, SubcarrierMap, DEFAULT_PILOT};
use crate::power::antenna_powers;
use crate::seed::{self, Stream};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: [u8; 8] = *b"SATJAMDS";
const HEADER_LEN: u64 = 32;
/// Per-cell floor applied when a dataset is scaled down.
pub const MIN_CELL_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
    C,
    D,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::A, Group::B, Group::C, Group::D];

    pub fn n_rx(self) -> usize {
        match self {
            Group::A | Group::C => 4,
            Group::B | Group::D => 8,
        }
    }

    /// Groups A and B hold one dataset per SNR; C and D pool all SNRs.
    pub fn single_snr(self) -> bool {
        matches!(self, Group::A | Group::B)
    }

    pub fn dataset_ids(self) -> std::ops::RangeInclusive<u32> {
        if self.single_snr() {
            1..=5
        } else {
            1..=1
        }
    }

    pub fn letter(self) -> char {
        match self {
            Group::A => 'A',
            Group::B => 'B',
            Group::C => 'C',
            Group::D => 'D',
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Group::A),
            "B" => Some(Group::B),
            "C" => Some(Group::C),
            "D" => Some(Group::D),
            _ => None,
        }
    }
}

pub const SNR_SET_DB: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];
pub const SJR_SET_DB: [f64; 5] = [0.0, -5.0, -10.0, -15.0, -20.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub group: Group,
    pub dataset_id: u32,
    pub n_rx: usize,
    pub snr_set: Vec<f64>,
    pub sjr_set: Vec<f64>,
    pub jam_types: Vec<JamType>,
    /// Full-scale samples per (jam type, SJR) cell.
    pub samples_per_cell: usize,
    /// Divisor applied to the present-class total; 1 is full scale.
    pub scale: usize,
    pub master_seed: u64,
}

impl ScenarioConfig {
    /// One of the twelve reference datasets: A1..A5 and B1..B5 (one SNR
    /// each, 150 per cell), C1 and D1 (all SNRs, 375 per cell).
    pub fn table(group: Group, dataset_id: u32, scale: usize, master_seed: u64) -> Result<Self> {
        if !group.dataset_ids().contains(&dataset_id) {
            return Err(Error::Config(format!(
                "group {} has no dataset {dataset_id}",
                group.letter()
            )));
        }
        let (snr_set, samples_per_cell) = if group.single_snr() {
            (vec![SNR_SET_DB[dataset_id as usize - 1]], 150)
        } else {
            (SNR_SET_DB.to_vec(), 375)
        };
        let config = Self {
            group,
            dataset_id,
            n_rx: group.n_rx(),
            snr_set,
            sjr_set: SJR_SET_DB.to_vec(),
            jam_types: JamType::ALL.to_vec(),
            samples_per_cell,
            scale,
            master_seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Every reference dataset at the given scale.
    pub fn all(scale: usize, master_seed: u64) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for g in Group::ALL {
            for id in g.dataset_ids() {
                out.push(Self::table(g, id, scale, master_seed)?);
            }
        }
        Ok(out)
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.group.letter(), self.dataset_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_set.is_empty() || self.sjr_set.is_empty() || self.jam_types.is_empty() {
            return Err(Error::Config("empty SNR, SJR or jam-type set".into()));
        }
        if self.scale == 0 || self.samples_per_cell == 0 {
            return Err(Error::Config("scale and samples per cell must be positive".into()));
        }
        if self.n_rx < 2 {
            return Err(Error::Config("need at least two receive antennas".into()));
        }
        if self.snr_set.iter().chain(&self.sjr_set).any(|v| !v.is_finite()) {
            return Err(Error::Config("SNR and SJR values must be finite".into()));
        }
        Ok(())
    }

    /// `(jam type, SJR)` cells in generation order.
    pub fn cells(&self) -> Vec<(JamType, f64)> {
        self.jam_types
            .iter()
            .flat_map(|&j| self.sjr_set.iter().map(move |&s| (j, s)))
            .collect()
    }

    /// Present-class sample count per cell after scaling. The scaled total
    /// is spread as evenly as possible with a floor of ten per cell.
    pub fn cell_counts(&self) -> Vec<usize> {
        let n_cells = self.cells().len();
        if self.scale == 1 {
            return vec![self.samples_per_cell; n_cells];
        }
        let total = self.samples_per_cell * n_cells / self.scale;
        let base = total / n_cells;
        let rem = total % n_cells;
        (0..n_cells)
            .map(|i| (base + usize::from(i < rem)).max(MIN_CELL_SAMPLES))
            .collect()
    }

    pub fn present_count(&self) -> usize {
        self.cell_counts().iter().sum()
    }

    /// The absent class mirrors the present class in size.
    pub fn absent_count(&self) -> usize {
        self.present_count()
    }

    pub fn total(&self) -> usize {
        self.present_count() + self.absent_count()
    }
}

/// Manifest entry of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub seed: u64,
    pub label: Label,
    pub snr_db: f64,
    pub sjr_db: Option<f64>,
    pub jam_type: Option<JamType>,
    pub attacked: Vec<usize>,
    /// Attack interval of each entry in `attacked`.
    pub intervals: Vec<AttackInterval>,
}

impl SampleRecord {
    pub fn scenario(&self) -> AttackScenario {
        match (self.label, self.jam_type, self.sjr_db) {
            (Label::Present, Some(j), Some(s)) => AttackScenario::jammed(j, s),
            _ => AttackScenario::absent(),
        }
    }

    /// Stratification / reporting key.
    pub fn cell(&self) -> CellKey {
        CellKey::new(self.label, self.snr_db, self.sjr_db, self.jam_type)
    }
}

/// `(label, SNR, SJR, jam type)` with dB values keyed in milli-dB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub label: Label,
    pub snr_mdb: i64,
    pub sjr_mdb: Option<i64>,
    pub jam_type: Option<JamType>,
}

impl CellKey {
    pub fn new(label: Label, snr_db: f64, sjr_db: Option<f64>, jam_type: Option<JamType>) -> Self {
        Self {
            label,
            snr_mdb: (snr_db * 1000.0).round() as i64,
            sjr_mdb: sjr_db.map(|s| (s * 1000.0).round() as i64),
            jam_type,
        }
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_mdb as f64 / 1000.0
    }

    pub fn sjr_db(&self) -> Option<f64> {
        self.sjr_mdb.map(|s| s as f64 / 1000.0)
    }
}

/// Deterministic sample list for a scenario: present cells in
/// `(jam type, SJR)` order, then the absent class. SNR cycles through the
/// SNR set within each cell.
pub fn plan_records(config: &ScenarioConfig, link: &LinkParams) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let n_symbols = link.n_symbols();
    let mut records = Vec::with_capacity(config.total());
    let mut push = |label: Label, i: usize, cell: Option<(JamType, f64)>| -> Result<()> {
        let id = records.len();
        let sample_seed = seed::derive(config.master_seed, id as u64);
        let scenario = match cell {
            Some((j, s)) => AttackScenario::jammed(j, s),
            None => AttackScenario::absent(),
        };
        let plan = draw_attack_plan(
            &scenario,
            config.n_rx,
            n_symbols,
            seed::stream_seed(sample_seed, Stream::AttackPlan),
        )?;
        let attacked = plan.attacked_antennas();
        let intervals = attacked.iter().map(|&r| plan.intervals[r][0]).collect();
        records.push(SampleRecord {
            id,
            seed: sample_seed,
            label,
            snr_db: config.snr_set[i % config.snr_set.len()],
            sjr_db: cell.map(|c| c.1),
            jam_type: cell.map(|c| c.0),
            attacked,
            intervals,
        });
        Ok(())
    };
    for (cell, count) in config.cells().into_iter().zip(config.cell_counts()) {
        for i in 0..count {
            push(Label::Present, i, Some(cell))?;
        }
    }
    for i in 0..config.absent_count() {
        push(Label::Absent, i, None)?;
    }
    Ok(records)
}

/// Multipath profile recorded in the manifest (the per-sample seed is
/// derived from the sample seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub k_factor: f64,
    pub n_taps: usize,
    pub tap_decay_db: f64,
}

impl ChannelProfile {
    pub fn reference() -> Self {
        let p = ChannelParams::reference(0);
        Self {
            k_factor: p.k_factor,
            n_taps: p.n_taps,
            tap_decay_db: p.tap_decay_db,
        }
    }

    pub fn with_seed(&self, seed: u64) -> ChannelParams {
        ChannelParams {
            k_factor: self.k_factor,
            n_taps: self.n_taps,
            tap_decay_db: self.tap_decay_db,
            seed,
        }
    }
}

/// Intermediate grids of one simulated record, for calibration checks.
#[derive(Debug, Clone)]
pub struct SimulatedRecord {
    /// Legitimate signal after the channel, before noise.
    pub clean: Vec<FrameGrid>,
    /// Clean plus receiver noise.
    pub noisy: Vec<FrameGrid>,
    /// Noisy plus jamming; what the receiver records.
    pub received: Vec<FrameGrid>,
    pub plan: AttackPlan,
    pub jam: Option<JamGrid>,
    /// Per-antenna legitimate power over active bins.
    pub antenna_powers: Vec<f64>,
    /// Antenna-averaged legitimate power; the SNR reference.
    pub reference_power: f64,
}

/// Transmitter, channels, attacker and featurizer wired together.
#[derive(Debug, Clone)]
pub struct SignalChain {
    pub link: LinkParams,
    pub map: SubcarrierMap,
    pub channel: ChannelProfile,
    pub features: FeatureParams,
}

impl SignalChain {
    pub fn new(link: LinkParams, channel: ChannelProfile, features: FeatureParams) -> Result<Self> {
        let map = build_subcarrier_map(&link)?;
        if channel.n_taps > link.cp_len {
            return Err(Error::Config(format!(
                "{} channel taps exceed the {}-sample cyclic prefix",
                channel.n_taps, link.cp_len
            )));
        }
        features.validate()?;
        check_len("feature windows", link.n_symbols(), features.n_windows)?;
        check_len("feature DFT length", link.n_subcarriers, features.dft_len)?;
        Ok(Self {
            link,
            map,
            channel,
            features,
        })
    }

    pub fn reference(n_rx: usize) -> Result<Self> {
        let link = LinkParams::reference(n_rx);
        let features = FeatureParams::for_link(&link);
        Self::new(link, ChannelProfile::reference(), features)
    }

    fn received_only(&self, sample_seed: u64, snr_db: f64, scenario: &AttackScenario, keep: bool) -> Result<SimulatedRecord> {
        let link = &self.link;
        let n = link.n_subcarriers;
        let n_symbols = link.n_symbols();

        let mut bit_rng = seed::stream_rng(sample_seed, Stream::Bits);
        let tx = (0..link.n_tx)
            .map(|_| {
                let bits: Vec<bool> = (0..link.bits_per_antenna())
                    .map(|_| rand::Rng::random(&mut bit_rng))
                    .collect();
                modulate_frame(&bits, &self.map, link, DEFAULT_PILOT)
            })
            .collect::<Result<Vec<_>>>()?;

        let legit = draw_channel(
            &self.channel.with_seed(seed::stream_seed(sample_seed, Stream::LegitChannel)),
            link.n_tx,
            link.n_rx,
            n,
        )?;
        let mut received = apply_channel(&tx, &legit)?;
        drop(tx);

        let active = self.map.active_indices();
        let powers = antenna_powers(&received, &active);
        let reference = powers.iter().sum::<f64>() / powers.len() as f64;
        let clean = if keep { received.clone() } else { Vec::new() };

        let mut noise_rng = seed::stream_rng(sample_seed, Stream::Noise);
        let noise = NoiseParams { snr_db };
        for g in received.iter_mut() {
            add_noise(g, &noise, reference, &mut noise_rng)?;
        }
        let noisy = if keep { received.clone() } else { Vec::new() };

        let plan = draw_attack_plan(
            scenario,
            link.n_rx,
            n_symbols,
            seed::stream_seed(sample_seed, Stream::AttackPlan),
        )?;
        let jam = if plan.present {
            let mut plan_seeded = plan.clone();
            plan_seeded.seed = seed::stream_seed(sample_seed, Stream::Jammer);
            let attacker_channel = draw_channel(
                &self.channel.with_seed(seed::stream_seed(sample_seed, Stream::AttackerChannel)),
                plan.jammer_tx,
                link.n_rx,
                n,
            )?;
            let jam = jam_signal(&plan_seeded, &self.map, n_symbols, &powers, &attacker_channel)?;
            inject(&mut received, &plan, &jam, &attacker_channel)?;
            Some(jam)
        } else {
            None
        };

        Ok(SimulatedRecord {
            clean,
            noisy,
            received,
            plan,
            jam: if keep { jam } else { None },
            antenna_powers: powers,
            reference_power: reference,
        })
    }

    /// Runs the chain keeping the clean and noise-only grids.
    pub fn simulate(&self, sample_seed: u64, snr_db: f64, scenario: &AttackScenario) -> Result<SimulatedRecord> {
        self.received_only(sample_seed, snr_db, scenario, true)
    }

    /// Converts received grids to time domain and featurizes them.
    pub fn featurize_received(&self, received: &[FrameGrid], label: Label, meta: SampleMeta) -> Result<SampleTensor> {
        let signals = received
            .iter()
            .map(|g| to_time_domain(g, &self.link))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<&[num_complex::Complex64]> = signals.iter().map(|s| s.samples.as_slice()).collect();
        featurize(&views, label, meta, &self.features)
    }

    /// Builds the tensor of one manifest record.
    pub fn generate_sample(&self, scenario_name: &str, record: &SampleRecord) -> Result<SampleTensor> {
        let sim = self.received_only(record.seed, record.snr_db, &record.scenario(), false)?;
        let meta = SampleMeta {
            scenario: scenario_name.to_string(),
            sample_id: record.id,
            seed: record.seed,
            snr_db: record.snr_db,
            sjr_db: record.sjr_db,
            jam_type: record.jam_type,
        };
        self.featurize_received(&sim.received, record.label, meta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub scenario: ScenarioConfig,
    pub link: LinkParams,
    pub channel: ChannelProfile,
    pub features: FeatureParams,
    /// `[T, F, n_rx]`
    pub tensor_shape: [usize; 3],
    pub records: Vec<SampleRecord>,
    /// Lowercase hex SHA-256 of the binary file.
    pub digest: String,
}

impl DatasetManifest {
    pub fn chain(&self) -> Result<SignalChain> {
        SignalChain::new(self.link.clone(), self.channel.clone(), self.features.clone())
    }

    pub fn sample_len(&self) -> usize {
        self.tensor_shape.iter().product()
    }

    pub fn meta(&self, record: &SampleRecord) -> SampleMeta {
        SampleMeta {
            scenario: self.name.clone(),
            sample_id: record.id,
            seed: record.seed,
            snr_db: record.snr_db,
            sjr_db: record.sjr_db,
            jam_type: record.jam_type,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = BufReader::new(File::open(path)?);
        let manifest: Self = serde_json::from_reader(file)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}

/// Locations of a dataset's binary and manifest files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub data: PathBuf,
    pub manifest: PathBuf,
}

impl DatasetPaths {
    pub fn new(dir: &Path, name: &str) -> Self {
        Self {
            data: dir.join(format!("{name}.bin")),
            manifest: dir.join(format!("{name}.manifest.json")),
        }
    }
}

/// Streams tensors into the binary format while hashing them.
pub struct DatasetWriter {
    out: BufWriter<File>,
    hasher: Sha256,
    shape: [usize; 3],
    expected: usize,
    written: usize,
}

impl DatasetWriter {
    pub fn create(path: &Path, shape: [usize; 3], count: usize) -> Result<Self> {
        let mut w = Self {
            out: BufWriter::with_capacity(1 << 20, File::create(path)?),
            hasher: Sha256::new(),
            shape,
            expected: count,
            written: 0,
        };
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Config("tensor dimension too large".into()))?;
            header.extend_from_slice(&d.to_le_bytes());
        }
        header.extend_from_slice(&(count as u64).to_le_bytes());
        w.emit(&header)?;
        Ok(w)
    }

    fn emit(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.out.write_all(bytes)?;
        Ok(())
    }

    pub fn write_sample(&mut self, tensor: &SampleTensor) -> Result<()> {
        let [t, f, r] = self.shape;
        if tensor.shape() != (t, f, r) {
            return Err(Error::SizeMismatch {
                what: "sample tensor",
                expected: t * f * r,
                actual: tensor.values.len(),
            });
        }
        if self.written == self.expected {
            return Err(Error::Format("more samples than declared in the header".into()));
        }
        let mut bytes = Vec::with_capacity(tensor.values.len() * 4);
        for v in &tensor.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.emit(&bytes)?;
        self.written += 1;
        Ok(())
    }

    /// Flushes and returns the hex digest.
    pub fn finish(mut self) -> Result<String> {
        if self.written != self.expected {
            return Err(Error::Format(format!(
                "wrote {} samples, header declares {}",
                self.written, self.expected
            )));
        }
        self.out.flush()?;
        Ok(hex::encode(self.hasher.finalize()))
    }
}

/// Hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = BufReader::with_capacity(1 << 20, File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Generates a reference dataset into `dir`.
pub fn generate_dataset(config: &ScenarioConfig, dir: &Path) -> Result<(DatasetPaths, DatasetManifest)> {
    let chain = SignalChain::reference(config.n_rx)?;
    generate_dataset_with(config, &chain, dir, |_, _| {})
}

/// Generates a dataset with an explicit signal chain, reporting progress as
/// `(done, total)`. Samples are built in parallel and written in order.
pub fn generate_dataset_with(
    config: &ScenarioConfig,
    chain: &SignalChain,
    dir: &Path,
    progress: impl Fn(usize, usize) + Sync,
) -> Result<(DatasetPaths, DatasetManifest)> {
    config.validate()?;
    check_len("chain receive antennas", config.n_rx, chain.link.n_rx)?;
    std::fs::create_dir_all(dir)?;
    let name = config.name();
    let paths = DatasetPaths::new(dir, &name);
    let records = plan_records(config, &chain.link)?;
    let (t, f) = chain.features.out_shape();
    let shape = [t, f, config.n_rx];

    let mut writer = DatasetWriter::create(&paths.data, shape, records.len())?;
    let batch = (2 * rayon::current_num_threads()).max(1);
    let mut done = 0;
    for chunk in records.chunks(batch) {
        let tensors = chunk
            .par_iter()
            .map(|r| chain.generate_sample(&name, r))
            .collect::<Result<Vec<_>>>()?;
        for tensor in &tensors {
            writer.write_sample(tensor)?;
        }
        done += chunk.len();
        progress(done, records.len());
    }
    let digest = writer.finish()?;

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        name,
        scenario: config.clone(),
        link: chain.link.clone(),
        channel: chain.channel.clone(),
        features: chain.features.clone(),
        tensor_shape: shape,
        records,
        digest,
    };
    manifest.write(&paths.manifest)?;
    Ok((paths, manifest))
}

/// Digest-verified random access to a dataset file.
pub struct DatasetReader {
    manifest: DatasetManifest,
    file: Mutex<File>,
}

impl DatasetReader {
    pub fn open(paths: &DatasetPaths) -> Result<Self> {
        let manifest = DatasetManifest::read(&paths.manifest)?;
        Self::open_with(&paths.data, manifest)
    }

    /// Verifies version, digest and header against `manifest`.
    pub fn open_with(data: &Path, manifest: DatasetManifest) -> Result<Self> {
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let digest = file_digest(data)?;
        if digest != manifest.digest {
            return Err(Error::Format(format!(
                "digest mismatch for {}: file {digest}, manifest {}",
                data.display(),
                manifest.digest
            )));
        }
        let mut file = File::open(data)?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated header".into()))?;
        if header[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("file version {version} (expected {FORMAT_VERSION})")));
        }
        let shape = [u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize];
        let count = u64::from_le_bytes(header[24..32].try_into().unwrap()) as usize;
        if shape != manifest.tensor_shape || count != manifest.records.len() {
            return Err(Error::Format(format!(
                "header {shape:?} x {count} disagrees with manifest {:?} x {}",
                manifest.tensor_shape,
                manifest.records.len()
            )));
        }
        let expected_len = HEADER_LEN + (count * shape.iter().product::<usize>() * 4) as u64;
        if file.metadata()?.len() != expected_len {
            return Err(Error::Format("file length disagrees with header".into()));
        }
        Ok(Self {
            manifest,
            file: Mutex::new(file),
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    /// Reads the raw values of sample `id` into `out`.
    pub fn read_values(&self, id: usize, out: &mut [f32]) -> Result<()> {
        let len = self.manifest.sample_len();
        check_len("sample buffer", len, out.len())?;
        if id >= self.len() {
            return Err(Error::Config(format!("sample id {id} out of range ({})", self.len())));
        }
        let mut bytes = vec![0u8; len * 4];
        {
            let mut file = self.file.lock().expect("dataset file lock");
            file.seek(SeekFrom::Start(HEADER_LEN + (id * len * 4) as u64))?;
            file.read_exact(&mut bytes)?;
        }
        for (v, b) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
        Ok(())
    }

    pub fn load(&self, ids: &[usize]) -> Result<Vec<SampleTensor>> {
        let [t, f, n_rx] = self.manifest.tensor_shape;
        ids.iter()
            .map(|&id| {
                let mut values = vec![0f32; t * f * n_rx];
                self.read_values(id, &mut values)?;
                let record = &self.manifest.records[id];
                Ok(SampleTensor {
                    t,
                    f,
                    n_rx,
                    values,
                    label: record.label,
                    meta: self.manifest.meta(record),
                })
            })
            .collect()
    }
}

/// Opens a dataset and loads the given samples in the order requested.
pub fn load_samples(paths: &DatasetPaths, ids: &[usize]) -> Result<Vec<SampleTensor>> {
    DatasetReader::open(paths)?.load(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitPolicy {
    /// 60% train / 40% test (groups A and B).
    Sixty40,
    /// 50% / 50% (groups C and D).
    Fifty50,
}

impl SplitPolicy {
    pub fn for_group(group: Group) -> Self {
        if group.single_snr() {
            SplitPolicy::Sixty40
        } else {
            SplitPolicy::Fifty50
        }
    }

    pub fn train_fraction(self) -> f64 {
        match self {
            SplitPolicy::Sixty40 => 0.6,
            SplitPolicy::Fifty50 => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub policy: SplitPolicy,
    pub seed: u64,
    /// Sample ids in manifest order.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split over `(label, SNR, SJR, jam type)` cells.
///
/// Each stratum contributes `floor(n * fraction)` training samples; the
/// remaining slots needed to reach `round(total * fraction)` go to the
/// strata with the largest fractional remainder (seeded tie-break).
pub fn split(manifest: &DatasetManifest, policy: SplitPolicy, seed: u64) -> Result<Split> {
    let expected = SplitPolicy::for_group(manifest.scenario.group);
    if policy != expected {
        return Err(Error::Config(format!(
            "group {} uses the {expected:?} split, not {policy:?}",
            manifest.scenario.group.letter()
        )));
    }
    let frac = policy.train_fraction();
    let mut strata: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    for r in &manifest.records {
        strata.entry(r.cell()).or_default().push(r.id);
    }
    if let Some((key, ids)) = strata.iter().find(|(_, ids)| ids.len() < 2) {
        return Err(Error::Config(format!(
            "stratum {key:?} has {} sample(s); need at least 2",
            ids.len()
        )));
    }

    let mut strata: Vec<(CellKey, Vec<usize>)> = strata.into_iter().collect();
    let mut rng = seed::rng(seed);
    for (_, ids) in strata.iter_mut() {
        ids.shuffle(&mut rng);
    }

    let mut take: Vec<usize> = strata
        .iter()
        .map(|(_, ids)| ((ids.len() as f64 * frac).floor() as usize).clamp(1, ids.len() - 1))
        .collect();
    let target = (manifest.records.len() as f64 * frac).round() as usize;
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| {
        let rem = |i: usize| strata[i].1.len() as f64 * frac - take[i] as f64;
        rem(b).total_cmp(&rem(a))
    });
    let mut assigned: usize = take.iter().sum();
    for &i in &order {
        if assigned >= target {
            break;
        }
        if take[i] + 1 < strata[i].1.len() && (take[i] + 1) as f64 <= strata[i].1.len() as f64 * frac + 1.0 {
            take[i] += 1;
            assigned += 1;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for ((_, ids), k) in strata.iter().zip(take) {
        train.extend_from_slice(&ids[..k]);
        test.extend_from_slice(&ids[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        policy,
        seed,
        train,
        test,
    })
}
