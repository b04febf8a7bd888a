use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use satjam_cnn::train::evaluate;
use satjam_cnn::{fit, load_checkpoint, save_checkpoint, Architecture, DatasetSource, TrainConfig};
use satjam_core::dataset::{file_digest, generate_dataset_with, split, DatasetManifest, DatasetPaths, DatasetReader, ScenarioConfig, SplitPolicy};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::runs::{
    counterpart, history_csv, low_snr_gap, read_json, threshold, write_file, write_json, RunPaths, RunReport, Runtime,
    SplitFile,
};

/// Progress messages go here; pass `std::io::sink()` to silence them.
pub type Log<'a> = &'a mut (dyn Write + Send);

macro_rules! note {
    ($log:expr, $($arg:tt)*) => {{
        let _ = writeln!($log, $($arg)*);
    }};
}

fn runtime(command: &str, dataset: &str, started: Instant) -> Runtime {
    Runtime {
        command: command.into(),
        dataset: dataset.into(),
        seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub name: String,
    pub samples: usize,
    pub digest: String,
}

pub fn generate(config: &RunConfig, log: Log) -> Result<Vec<Generated>> {
    let mut out = Vec::new();
    for scenario in config.scenarios()? {
        let name = scenario.name();
        let total = scenario.total();
        note!(log, "generate {name}: {total} samples, scale {}", scenario.scale);
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| CliError::io(format!("creating {}", config.data_dir.display()), e))?;
        let started = Instant::now();
        let chain = satjam_core::SignalChain::reference(scenario.n_rx)?;
        let step = (total / 10).max(1);
        let shared = Mutex::new((&mut *log, 0usize));
        let (_, manifest) = generate_dataset_with(&scenario, &chain, &config.data_dir, |done, total| {
            let mut guard = shared.lock().unwrap_or_else(|p| p.into_inner());
            let (log, last) = &mut *guard;
            if done / step > *last {
                *last = done / step;
                note!(log, "  {name}: {done}/{total}");
            }
        })?;
        note!(
            log,
            "generate {name}: digest {} ({:.1} s)",
            manifest.digest,
            started.elapsed().as_secs_f64()
        );
        out.push(Generated {
            name,
            samples: manifest.records.len(),
            digest: manifest.digest,
        });
    }
    Ok(out)
}

/// Opens a generated dataset and checks that it was built from `expected`.
pub fn open_dataset(data_dir: &Path, expected: &ScenarioConfig) -> Result<DatasetReader> {
    let name = expected.name();
    let paths = DatasetPaths::new(data_dir, &name);
    if !paths.manifest.exists() || !paths.data.exists() {
        return Err(CliError::io(
            format!("dataset {name} in {}; run `satjam generate` first", data_dir.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
        ));
    }
    let reader = DatasetReader::open(&paths)?;
    let found = &reader.manifest().scenario;
    if found != expected {
        return Err(CliError::Config(format!(
            "dataset {name} was generated with scale {} and seed {}, not scale {} and seed {}",
            found.scale, found.master_seed, expected.scale, expected.master_seed
        )));
    }
    Ok(reader)
}

fn make_split(config: &RunConfig, manifest: &DatasetManifest) -> Result<SplitFile> {
    let policy = SplitPolicy::for_group(manifest.scenario.group);
    let s = split(manifest, policy, config.split_seed())?;
    Ok(SplitFile {
        dataset: manifest.name.clone(),
        dataset_digest: manifest.digest.clone(),
        policy,
        seed: s.seed,
        train: s.train,
        test: s.test,
    })
}

pub fn train_config(config: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        seed: config.train_seed(),
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub name: String,
    pub final_loss: Option<f64>,
    pub checkpoint_digest: String,
}

pub fn train(config: &RunConfig, log: Log) -> Result<Vec<Trained>> {
    let mut out = Vec::new();
    for scenario in config.scenarios()? {
        let name = scenario.name();
        let reader = open_dataset(&config.data_dir, &scenario)?;
        let manifest = reader.manifest();
        let split = make_split(config, manifest)?;
        let paths = RunPaths::new(&config.run_dir, &name);
        write_json(&paths.split, &split)?;

        let [t, f, r] = manifest.tensor_shape;
        let arch = Architecture::detector((t, f, r));
        let src = DatasetSource::new(&reader, split.train.clone())?;
        note!(
            log,
            "train {name}: {} samples, {} epochs, batch {}",
            split.train.len(),
            config.epochs,
            config.batch_size
        );
        let started = Instant::now();
        let (net, opt, history) = fit(arch, config.init_seed(), &src, &train_config(config), |e| {
            note!(
                log,
                "  {name} epoch {}/{}: loss {:.5} accuracy {:.4} ({:.0} s)",
                e.epoch,
                config.epochs,
                e.loss,
                e.accuracy,
                started.elapsed().as_secs_f64()
            );
        })?;
        save_checkpoint(&paths.checkpoint, &net, Some(&opt))?;
        write_file(&paths.history, history_csv(&history))?;
        write_json(&paths.train_runtime, &runtime("train", &name, started))?;
        let digest = file_digest(&paths.checkpoint)?;
        note!(log, "train {name}: checkpoint {}", paths.checkpoint.display());
        out.push(Trained {
            name,
            final_loss: history.epochs.last().map(|e| e.loss),
            checkpoint_digest: digest,
        });
    }
    Ok(out)
}

pub fn eval(config: &RunConfig, log: Log) -> Result<Vec<RunReport>> {
    let mut out = Vec::new();
    for scenario in config.scenarios()? {
        let name = scenario.name();
        let reader = open_dataset(&config.data_dir, &scenario)?;
        let manifest = reader.manifest();
        let paths = RunPaths::new(&config.run_dir, &name);
        let split: SplitFile = read_json(&paths.split)?;
        if split.dataset_digest != manifest.digest {
            return Err(CliError::Config(format!(
                "{name}: split was made for dataset digest {}, found {}",
                split.dataset_digest, manifest.digest
            )));
        }
        if !paths.checkpoint.exists() {
            return Err(CliError::io(
                format!("checkpoint {}; run `satjam train` first", paths.checkpoint.display()),
                std::io::Error::new(std::io::ErrorKind::NotFound, "not found"),
            ));
        }
        let started = Instant::now();
        let (net, _) = load_checkpoint(&paths.checkpoint)?;
        let src = DatasetSource::new(&reader, split.test.clone())?;
        let evaluation = evaluate(&net, &src, config.batch_size)?;
        let limit = threshold(scenario.scale, scenario.n_rx);
        let mut report = RunReport {
            dataset: name.clone(),
            group: scenario.group,
            n_rx: scenario.n_rx,
            scale: scenario.scale,
            seed: scenario.master_seed,
            dataset_digest: manifest.digest.clone(),
            checkpoint_digest: file_digest(&paths.checkpoint)?,
            train_samples: split.train.len(),
            test_samples: split.test.len(),
            epochs: history_len(&paths).unwrap_or(0),
            passed: evaluation.accuracy() >= limit,
            threshold: limit,
            evaluation,
            low_snr_gap: None,
        };
        report.low_snr_gap = pair_gap(&config.run_dir, &report);
        write_json(&paths.report_json, &report)?;
        write_file(&paths.report_txt, report.to_text())?;
        write_json(&paths.eval_runtime, &runtime("eval", &name, started))?;
        note!(
            log,
            "eval {name}: accuracy {:.4} on {} samples (threshold {:.3}, {})",
            report.accuracy(),
            report.test_samples,
            limit,
            if report.passed { "pass" } else { "fail" }
        );
        if let Some(g) = &report.low_snr_gap {
            note!(
                log,
                "eval {name}: at {} dB, 4 antennas {:.4}, 8 antennas {:.4}, gap {:.4} (published {:.3})",
                g.snr_db,
                g.accuracy_4rx,
                g.accuracy_8rx,
                g.gap,
                g.published_gap
            );
        }
        out.push(report);
    }
    Ok(out)
}

fn history_len(paths: &RunPaths) -> Option<usize> {
    let text = std::fs::read_to_string(&paths.history).ok()?;
    crate::runs::parse_history(&text).ok().map(|h| h.epochs.len())
}

/// Gap against the other antenna count's report, if one exists at the
/// same scale and seed.
fn pair_gap(run_dir: &Path, report: &RunReport) -> Option<crate::runs::SnrGap> {
    let other_name = counterpart(&report.dataset)?;
    let other: RunReport = read_json(&RunPaths::new(run_dir, &other_name).report_json).ok()?;
    if other.scale != report.scale || other.seed != report.seed {
        return None;
    }
    let (four, eight) = if report.n_rx < other.n_rx {
        (report, &other)
    } else {
        (&other, report)
    };
    low_snr_gap(&four.evaluation, &eight.evaluation)
}
