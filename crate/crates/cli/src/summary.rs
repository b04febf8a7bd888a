//! Merged summary over the twelve reference datasets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use satjam_core::dataset::{DatasetPaths, DatasetReader, Group};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::runs::{low_snr_gap, read_json, write_file, write_json, RunPaths, RunReport, SnrGap, PUBLISHED_ACCURACY_C, PUBLISHED_ACCURACY_D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Pass,
    Fail,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub n_rx: usize,
    pub status: RowStatus,
    pub accuracy: Option<f64>,
    pub threshold: Option<f64>,
    pub scale: Option<usize>,
    pub test_samples: Option<usize>,
    pub dataset_digest: Option<String>,
}

/// Accuracy per SNR for both antenna counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub snr_db: f64,
    pub accuracy_4rx: Option<f64>,
    pub accuracy_8rx: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// Pooled-SNR models (C and D), per SNR.
    pub pooled_per_snr: Vec<SnrRow>,
    /// One model per SNR (A and B datasets).
    pub per_snr_models: Vec<SnrRow>,
    pub low_snr_gap: Option<SnrGap>,
    pub published_accuracy_4rx: f64,
    pub published_accuracy_8rx: f64,
}

impl Summary {
    pub fn complete_and_passing(&self) -> bool {
        self.rows.iter().all(|r| r.status == RowStatus::Pass)
    }
}

fn dataset_names() -> Vec<(String, usize)> {
    Group::ALL
        .iter()
        .flat_map(|&g| g.dataset_ids().map(move |id| (format!("{}{id}", g.letter()), g.n_rx())))
        .collect()
}

fn load_report(run_dir: &Path, name: &str) -> Result<Option<RunReport>> {
    let path = RunPaths::new(run_dir, name).report_json;
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

pub fn summarize(run_dir: &Path) -> Result<Summary> {
    let mut rows = Vec::new();
    let mut reports = std::collections::BTreeMap::new();
    for (name, n_rx) in dataset_names() {
        let report = load_report(run_dir, &name)?;
        rows.push(match &report {
            None => SummaryRow {
                dataset: name.clone(),
                n_rx,
                status: RowStatus::Absent,
                accuracy: None,
                threshold: None,
                scale: None,
                test_samples: None,
                dataset_digest: None,
            },
            Some(r) => SummaryRow {
                dataset: name.clone(),
                n_rx,
                status: if r.passed { RowStatus::Pass } else { RowStatus::Fail },
                accuracy: Some(r.accuracy()),
                threshold: Some(r.threshold),
                scale: Some(r.scale),
                test_samples: Some(r.test_samples),
                dataset_digest: Some(r.dataset_digest.clone()),
            },
        });
        if let Some(r) = report {
            reports.insert(name, r);
        }
    }

    let pooled_per_snr = {
        let c = reports.get("C1");
        let d = reports.get("D1");
        let mut snrs: Vec<f64> = c
            .iter()
            .chain(d.iter())
            .flat_map(|r| r.evaluation.per_snr.iter().map(|s| s.snr_db))
            .collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();
        let at = |r: Option<&RunReport>, snr: f64| {
            r.and_then(|r| r.evaluation.per_snr.iter().find(|s| s.snr_db == snr).map(|s| s.tally.accuracy))
        };
        snrs.into_iter()
            .map(|snr| SnrRow {
                snr_db: snr,
                accuracy_4rx: at(c, snr),
                accuracy_8rx: at(d, snr),
            })
            .collect()
    };
    let per_snr_models = (1..=5)
        .map(|id| {
            let acc = |g: char| reports.get(&format!("{g}{id}")).map(RunReport::accuracy);
            SnrRow {
                snr_db: satjam_core::dataset::SNR_SET_DB[id - 1],
                accuracy_4rx: acc('A'),
                accuracy_8rx: acc('B'),
            }
        })
        .collect();
    let low_snr_gap = match (reports.get("C1"), reports.get("D1")) {
        (Some(c), Some(d)) => low_snr_gap(&c.evaluation, &d.evaluation),
        _ => None,
    };
    Ok(Summary {
        rows,
        pooled_per_snr,
        per_snr_models,
        low_snr_gap,
        published_accuracy_4rx: PUBLISHED_ACCURACY_C,
        published_accuracy_8rx: PUBLISHED_ACCURACY_D,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

pub fn render(summary: &Summary) -> String {
    let mut s = String::new();
    writeln!(s, "# reproduction summary").unwrap();
    writeln!(s, "dataset,n_rx,scale,test_samples,accuracy,threshold,status,dataset_digest").unwrap();
    for r in &summary.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.dataset,
            r.n_rx,
            r.scale.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            r.test_samples.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            opt(r.accuracy),
            r.threshold.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
            match r.status {
                RowStatus::Pass => "PASS",
                RowStatus::Fail => "FAIL",
                RowStatus::Absent => "ABSENT",
            },
            r.dataset_digest.as_deref().unwrap_or("-")
        )
        .unwrap();
    }
    writeln!(s, "\n# aggregate accuracy by receive antennas (pooled SNR)").unwrap();
    writeln!(s, "n_rx,accuracy,published").unwrap();
    let acc = |name: &str| summary.rows.iter().find(|r| r.dataset == name).and_then(|r| r.accuracy);
    writeln!(s, "4,{},{:.4}", opt(acc("C1")), summary.published_accuracy_4rx).unwrap();
    writeln!(s, "8,{},{:.4}", opt(acc("D1")), summary.published_accuracy_8rx).unwrap();
    for (title, table) in [
        ("accuracy per SNR, pooled-SNR models", &summary.pooled_per_snr),
        ("accuracy per SNR, one model per SNR", &summary.per_snr_models),
    ] {
        writeln!(s, "\n# {title}").unwrap();
        writeln!(s, "snr_db,accuracy_4rx,accuracy_8rx").unwrap();
        for r in table {
            writeln!(s, "{},{},{}", r.snr_db, opt(r.accuracy_4rx), opt(r.accuracy_8rx)).unwrap();
        }
    }
    if let Some(g) = &summary.low_snr_gap {
        writeln!(s, "\n# lowest-SNR gap, pooled-SNR models (informational)").unwrap();
        writeln!(s, "snr_db,accuracy_4rx,accuracy_8rx,gap,published_gap").unwrap();
        writeln!(s, "{},{:.4},{:.4},{:.4},{:.4}", g.snr_db, g.accuracy_4rx, g.accuracy_8rx, g.gap, g.published_gap).unwrap();
    }
    s
}

/// Writes `summary.txt` and `summary.json`. Fails with an acceptance error
/// when any dataset is absent or below its threshold.
pub fn report(run_dir: &Path) -> Result<Summary> {
    let summary = summarize(run_dir)?;
    write_file(&run_dir.join("summary.txt"), render(&summary))?;
    write_json(&run_dir.join("summary.json"), &summary)?;
    let absent: Vec<&str> = summary
        .rows
        .iter()
        .filter(|r| r.status == RowStatus::Absent)
        .map(|r| r.dataset.as_str())
        .collect();
    let failed: Vec<&str> = summary
        .rows
        .iter()
        .filter(|r| r.status == RowStatus::Fail)
        .map(|r| r.dataset.as_str())
        .collect();
    if !absent.is_empty() || !failed.is_empty() {
        return Err(CliError::Acceptance(format!(
            "absent: [{}], below threshold: [{}]",
            absent.join(" "),
            failed.join(" ")
        )));
    }
    Ok(summary)
}

/// `NAME:ID`, a sample of a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRef {
    pub dataset: String,
    pub id: usize,
}

impl std::str::FromStr for SampleRef {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, id) = s.split_once(':').ok_or("expected NAME:ID, e.g. C1:17")?;
        let id = id.parse().map_err(|_| format!("bad sample id {id:?}"))?;
        Ok(Self {
            dataset: name.to_string(),
            id,
        })
    }
}

/// Binary PGM of one antenna plane, time down the rows, frequency across,
/// scaled from the sample's minimum (black) to maximum (white).
pub fn pgm(values: &[f32], shape: [usize; 3], antenna: usize) -> Vec<u8> {
    let [t, f, r] = shape;
    let plane: Vec<f32> = (0..t * f).map(|i| values[i * r + antenna]).collect();
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{f} {t}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| (((v - lo) / span) * 255.0).round() as u8));
    out
}

/// Writes one image per antenna to `<out_dir>/<NAME>_<ID>_rx<r>.pgm`.
pub fn dump_plot(data_dir: &Path, out_dir: &Path, sample: &SampleRef) -> Result<Vec<PathBuf>> {
    let paths = DatasetPaths::new(data_dir, &sample.dataset);
    let reader = DatasetReader::open(&paths)?;
    if sample.id >= reader.len() {
        return Err(CliError::Config(format!(
            "{} has {} samples, no sample {}",
            sample.dataset,
            reader.len(),
            sample.id
        )));
    }
    let shape = reader.manifest().tensor_shape;
    let mut values = vec![0f32; shape.iter().product()];
    reader.read_values(sample.id, &mut values)?;
    let mut written = Vec::new();
    for r in 0..shape[2] {
        let path = out_dir.join(format!("{}_{}_rx{r}.pgm", sample.dataset, sample.id));
        write_file(&path, pgm(&values, shape, r))?;
        written.push(path);
    }
    Ok(written)
}
