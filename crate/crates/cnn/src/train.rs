use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use satjam_core::dataset::CellKey;
use satjam_core::featurizer::{Label, SampleMeta};
use satjam_core::seed;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::data::BatchSource;
use crate::error::{shape_err, CnnError, Result};
use crate::layers::cross_entropy;
use crate::network::{Mode, Network, Workspace};
use crate::real::Real;
use crate::subnormal::FlushGuard;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Training accuracy under the epoch's dropout masks.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

fn to_real<R: Real>(x: Vec<f32>) -> Vec<R> {
    x.into_iter().map(|v| R::from_f64(v as f64)).collect()
}

fn check_shape<R: Real>(net: &Network<R>, src: &dyn BatchSource) -> Result<()> {
    if src.input_shape() != net.arch.input {
        return shape_err("dataset tensors", net.arch.input, src.input_shape());
    }
    Ok(())
}

/// Mini-batch training. Each epoch visits every sample once in an order
/// shuffled from `(seed, epoch)`; the final partial batch is kept.
pub fn train<R: Real>(
    net: &mut Network<R>,
    opt: &mut Adam<R>,
    src: &dyn BatchSource,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<History> {
    check_shape(net, src)?;
    if config.batch_size == 0 {
        return Err(CnnError::Config("batch size must be positive".into()));
    }
    if src.is_empty() && config.epochs > 0 {
        return Err(CnnError::Config("no training samples".into()));
    }
    let _flush = FlushGuard::new();
    let mut history = History::default();
    let mut ws = Workspace::new();
    for epoch in 0..config.epochs {
        let epoch_seed = seed::derive(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..src.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive(epoch_seed, 0)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, positions) in order.chunks(config.batch_size).enumerate() {
            let batch = src.batch(positions)?;
            let x = to_real::<R>(batch.x);
            let mode = Mode::Train {
                dropout_seed: Some(seed::derive(epoch_seed, b as u64 + 1)),
            };
            let fwd = net.forward_in(&x, batch.n, mode, &mut ws)?;
            loss_sum += cross_entropy(&fwd.probs, &batch.labels, fwd.classes) * batch.n as f64;
            correct += fwd
                .predictions()
                .iter()
                .zip(&batch.labels)
                .filter(|(p, y)| p == y)
                .count();
            net.backward_in(&fwd, &batch.labels, &mut ws)?;
            net.absorb_batch_stats(&fwd)?;
            ws.recycle(fwd);
            opt.update(&mut net.params, ws.grads().expect("gradient of the last step"))?;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / src.len() as f64,
            accuracy: correct as f64 / src.len() as f64,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}

/// Builds a fresh network and optimizer and trains it.
pub fn fit(
    arch: crate::arch::Architecture,
    init_seed: u64,
    src: &dyn BatchSource,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Network<f32>, Adam<f32>, History)> {
    let mut net = Network::new(arch, init_seed)?;
    let mut opt = Adam::new(config.adam, &arch);
    let history = train(&mut net, &mut opt, src, config, on_epoch)?;
    Ok((net, opt, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Tally {
    fn new(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellKey,
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrResult {
    pub snr_db: f64,
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: Tally,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// One entry per `(label, SNR, SJR, jam type)` cell, sorted by key.
    pub cells: Vec<CellResult>,
    /// Accuracy at each SNR over both classes, ascending SNR.
    pub per_snr: Vec<SnrResult>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy
    }
}

/// Scores predictions against labels, grouped by sample metadata.
pub fn score(labels: &[usize], predictions: &[usize], meta: &[SampleMeta], classes: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() || meta.len() != labels.len() {
        return shape_err("evaluation inputs", labels.len(), (predictions.len(), meta.len()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut cells: BTreeMap<CellKey, (usize, usize)> = BTreeMap::new();
    let mut snrs: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for ((&y, &p), m) in labels.iter().zip(predictions).zip(meta) {
        if y >= classes || p >= classes {
            return Err(CnnError::Config(format!("class index outside {classes} classes")));
        }
        confusion[y][p] += 1;
        let hit = usize::from(y == p);
        correct += hit;
        let label = Label::from_index(y).unwrap_or(Label::Present);
        let key = CellKey::new(label, m.snr_db, m.sjr_db, m.jam_type);
        let c = cells.entry(key).or_default();
        c.0 += hit;
        c.1 += 1;
        let s = snrs.entry(key.snr_mdb).or_default();
        s.0 += hit;
        s.1 += 1;
    }
    Ok(Evaluation {
        overall: Tally::new(correct, labels.len()),
        confusion,
        cells: cells
            .into_iter()
            .map(|(cell, (c, t))| CellResult {
                cell,
                tally: Tally::new(c, t),
            })
            .collect(),
        per_snr: snrs
            .into_iter()
            .map(|(mdb, (c, t))| SnrResult {
                snr_db: mdb as f64 / 1000.0,
                tally: Tally::new(c, t),
            })
            .collect(),
    })
}

/// Evaluation-mode predictions over a whole source, in batches.
pub fn evaluate<R: Real>(net: &Network<R>, src: &dyn BatchSource, batch_size: usize) -> Result<Evaluation> {
    check_shape(net, src)?;
    let batch_size = batch_size.max(1);
    let mut labels = Vec::with_capacity(src.len());
    let mut preds = Vec::with_capacity(src.len());
    let mut meta = Vec::with_capacity(src.len());
    let positions: Vec<usize> = (0..src.len()).collect();
    let _flush = FlushGuard::new();
    let mut ws = Workspace::new();
    for chunk in positions.chunks(batch_size) {
        let batch = src.batch(chunk)?;
        let x = to_real::<R>(batch.x);
        let fwd = net.forward_in(&x, batch.n, Mode::Eval, &mut ws)?;
        preds.extend(fwd.predictions());
        labels.extend(batch.labels);
        meta.extend(batch.meta);
    }
    score(&labels, &preds, &meta, net.arch.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use satjam_core::attacker::JamType;

    fn meta(snr: f64, sjr: Option<f64>) -> SampleMeta {
        SampleMeta {
            scenario: "t".into(),
            sample_id: 0,
            seed: 0,
            snr_db: snr,
            sjr_db: sjr,
            jam_type: sjr.map(|_| JamType::Barrage),
        }
    }

    #[test]
    fn always_absent_scores_half_on_balanced_data() {
        let labels = [0, 0, 1, 1];
        let meta: Vec<_> = [None, None, Some(0.0), Some(-5.0)].iter().map(|&s| meta(5.0, s)).collect();
        let e = score(&labels, &[0; 4], &meta, 2).unwrap();
        assert_eq!(e.accuracy(), 0.5);
        assert_eq!(e.confusion, vec![vec![2, 0], vec![2, 0]]);
    }

    #[test]
    fn perfect_predictions_give_diagonal_confusion() {
        let labels = [0, 1, 1, 0, 1];
        let meta: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| meta(5.0 * (1 + i % 2) as f64, (y == 1).then_some(-10.0)))
            .collect();
        let e = score(&labels, &labels, &meta, 2).unwrap();
        assert_eq!(e.accuracy(), 1.0);
        assert_eq!(e.confusion, vec![vec![2, 0], vec![0, 3]]);
        assert_eq!(e.per_snr.len(), 2);
        assert_eq!(e.per_snr[0].snr_db, 5.0);
        assert_eq!(e.per_snr.iter().map(|s| s.tally.total).sum::<usize>(), 5);
        assert_eq!(e.cells.iter().map(|c| c.tally.total).sum::<usize>(), 5);
    }

    #[test]
    fn breakdown_tracks_each_cell() {
        let labels = [1, 1, 1, 0];
        let preds = [1, 0, 1, 0];
        let meta = vec![meta(5.0, Some(0.0)), meta(5.0, Some(0.0)), meta(5.0, Some(-20.0)), meta(5.0, None)];
        let e = score(&labels, &preds, &meta, 2).unwrap();
        let cell = e
            .cells
            .iter()
            .find(|c| c.cell.sjr_db() == Some(0.0))
            .unwrap();
        assert_eq!((cell.tally.correct, cell.tally.total), (1, 2));
        assert_eq!(e.cells.len(), 3);
        assert!(e.cells.iter().all(|c| (0.0..=1.0).contains(&c.tally.accuracy)));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(score(&[0, 1], &[0], &[meta(5.0, None), meta(5.0, None)], 2).is_err());
    }
}
