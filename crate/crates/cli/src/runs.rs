//! Files written under the run directory and the per-dataset report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use satjam_cnn::train::Evaluation;
use satjam_cnn::{EpochStats, History};
use satjam_core::dataset::{Group, SplitPolicy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Published aggregate accuracy for the pooled-SNR datasets (C: 4 antennas,
/// D: 8 antennas).
pub const PUBLISHED_ACCURACY_C: f64 = 0.9995;
pub const PUBLISHED_ACCURACY_D: f64 = 0.9833;
/// Accuracy floor at full scale.
pub const FULL_SCALE_THRESHOLD: f64 = 0.978;
/// Accuracy floors for reduced datasets, by receive-antenna count.
pub const DESK_THRESHOLD_4RX: f64 = 0.95;
pub const DESK_THRESHOLD_8RX: f64 = 0.93;
/// Accuracy drop at the lowest SNR in the published results for 8 antennas.
pub const PUBLISHED_LOW_SNR_GAP: f64 = 0.015;

pub fn threshold(scale: usize, n_rx: usize) -> f64 {
    if scale == 1 {
        FULL_SCALE_THRESHOLD
    } else if n_rx <= 4 {
        DESK_THRESHOLD_4RX
    } else {
        DESK_THRESHOLD_8RX
    }
}

/// Dataset with the same SNR coverage and the other antenna count.
pub fn counterpart(name: &str) -> Option<String> {
    let mut chars = name.chars();
    let group = Group::parse(&chars.next()?.to_string())?;
    let rest: String = chars.collect();
    let other = match group {
        Group::A => 'B',
        Group::B => 'A',
        Group::C => 'D',
        Group::D => 'C',
    };
    Some(format!("{other}{rest}"))
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub split: PathBuf,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub train_runtime: PathBuf,
    pub eval_runtime: PathBuf,
}

impl RunPaths {
    pub fn new(run_dir: &Path, name: &str) -> Self {
        let f = |suffix: &str| run_dir.join(format!("{name}.{suffix}"));
        Self {
            checkpoint: f("ckpt"),
            history: f("history.csv"),
            split: f("split.json"),
            report_json: f("report.json"),
            report_txt: f("report.txt"),
            train_runtime: f("train.runtime.json"),
            eval_runtime: f("eval.runtime.json"),
        }
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Train/test assignment used by a run, tied to the dataset content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub dataset: String,
    pub dataset_digest: String,
    pub policy: SplitPolicy,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn history_csv(history: &History) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for e in &history.epochs {
        writeln!(s, "{},{},{}", e.epoch, e.loss, e.accuracy).unwrap();
    }
    s
}

pub fn parse_history(text: &str) -> Result<History> {
    let mut lines = text.lines();
    if lines.next() != Some("epoch,loss,accuracy") {
        return Err(CliError::Format("history: missing header".into()));
    }
    let bad = |l: &str| CliError::Format(format!("history: bad line {l:?}"));
    let epochs = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad(l));
            }
            Ok(EpochStats {
                epoch: f[0].parse().map_err(|_| bad(l))?,
                loss: f[1].parse().map_err(|_| bad(l))?,
                accuracy: f[2].parse().map_err(|_| bad(l))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(History { epochs })
}

/// Running median over a centred window of `width` values, truncated at
/// the ends. An even-sized truncated window averages its two middle values.
pub fn median_filter(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            let mut w = values[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len();
            if m % 2 == 1 {
                w[m / 2]
            } else {
                0.5 * (w[m / 2 - 1] + w[m / 2])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrGap {
    pub snr_db: f64,
    pub accuracy_4rx: f64,
    pub accuracy_8rx: f64,
    /// `accuracy_4rx - accuracy_8rx`.
    pub gap: f64,
    pub published_gap: f64,
}

/// Gap at the lowest SNR the two per-SNR tables share.
pub fn low_snr_gap(four: &Evaluation, eight: &Evaluation) -> Option<SnrGap> {
    let snr = four
        .per_snr
        .iter()
        .map(|s| s.snr_db)
        .filter(|s| eight.per_snr.iter().any(|e| e.snr_db == *s))
        .min_by(f64::total_cmp)?;
    let acc = |e: &Evaluation| e.per_snr.iter().find(|s| s.snr_db == snr).map(|s| s.tally.accuracy);
    let (a4, a8) = (acc(four)?, acc(eight)?);
    Some(SnrGap {
        snr_db: snr,
        accuracy_4rx: a4,
        accuracy_8rx: a8,
        gap: a4 - a8,
        published_gap: PUBLISHED_LOW_SNR_GAP,
    })
}

/// Evaluation of one trained dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub group: Group,
    pub n_rx: usize,
    pub scale: usize,
    pub seed: u64,
    pub dataset_digest: String,
    pub checkpoint_digest: String,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: usize,
    pub evaluation: Evaluation,
    pub threshold: f64,
    pub passed: bool,
    /// Lowest-SNR comparison with the other antenna count, when its report
    /// was available.
    pub low_snr_gap: Option<SnrGap>,
}

impl RunReport {
    pub fn accuracy(&self) -> f64 {
        self.evaluation.accuracy()
    }

    /// Delimited-text rendering.
    pub fn to_text(&self) -> String {
        let e = &self.evaluation;
        let mut s = String::new();
        writeln!(s, "# dataset {} (group {}, n_rx {}, scale {})", self.dataset, self.group.letter(), self.n_rx, self.scale).unwrap();
        writeln!(s, "# dataset digest {}", self.dataset_digest).unwrap();
        writeln!(s, "# checkpoint digest {}", self.checkpoint_digest).unwrap();
        writeln!(s, "# train {} test {} epochs {}", self.train_samples, self.test_samples, self.epochs).unwrap();
        writeln!(
            s,
            "# accuracy {:.4} ({}/{}) threshold {:.3} {}",
            e.overall.accuracy,
            e.overall.correct,
            e.overall.total,
            self.threshold,
            if self.passed { "PASS" } else { "FAIL" }
        )
        .unwrap();
        writeln!(s, "\n# confusion (rows true, columns predicted; 0 absent, 1 present)").unwrap();
        for row in &e.confusion {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        writeln!(s, "\n# per-SNR accuracy").unwrap();
        writeln!(s, "snr_db,correct,total,accuracy").unwrap();
        for p in &e.per_snr {
            writeln!(s, "{},{},{},{:.4}", p.snr_db, p.tally.correct, p.tally.total, p.tally.accuracy).unwrap();
        }
        writeln!(s, "\n# per-cell accuracy").unwrap();
        writeln!(s, "label,snr_db,sjr_db,jam_type,correct,total,accuracy").unwrap();
        for c in &e.cells {
            let k = &c.cell;
            writeln!(
                s,
                "{:?},{},{},{},{},{},{:.4}",
                k.label,
                k.snr_db(),
                k.sjr_db().map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                k.jam_type.map(|j| j.name()).unwrap_or("-"),
                c.tally.correct,
                c.tally.total,
                c.tally.accuracy
            )
            .unwrap();
        }
        if let Some(g) = &self.low_snr_gap {
            writeln!(s, "\n# lowest-SNR gap between 4 and 8 receive antennas").unwrap();
            writeln!(s, "snr_db,accuracy_4rx,accuracy_8rx,gap,published_gap").unwrap();
            writeln!(s, "{},{:.4},{:.4},{:.4},{:.4}", g.snr_db, g.accuracy_4rx, g.accuracy_8rx, g.gap, g.published_gap).unwrap();
        }
        s
    }
}

/// Wall-clock metadata, kept out of the reports so they stay reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Runtime {
    pub command: String,
    pub dataset: String,
    pub seconds: f64,
    pub threads: usize,
}
