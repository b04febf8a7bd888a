//! Run configuration.
//!
//! A config file is flat TOML; every key is optional and overrides the
//! corresponding command-line flag:
//!
//! ```toml
//! group = "C"          # A, B, C or D; omit for all twelve datasets
//! id = 1               # dataset within the group; omit for all of them
//! scale = 5            # 1 is full scale
//! seed = 7             # master seed, below 2^63
//! epochs = 50
//! batch_size = 32
//! data_dir = "data"    # dataset files and manifests
//! run_dir = "runs"     # checkpoints, histories and reports
//! ```
//!
//! `SATJAM_DATA_DIR` and `SATJAM_RUN_DIR` override the two paths after the
//! file is applied. No other setting can come from the environment.

use std::path::{Path, PathBuf};

use satjam_core::dataset::{Group, ScenarioConfig};
use satjam_core::seed;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DATA_DIR_ENV: &str = "SATJAM_DATA_DIR";
pub const RUN_DIR_ENV: &str = "SATJAM_RUN_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    pub scale: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            group: None,
            id: None,
            scale: 1,
            seed: 1,
            epochs: 50,
            batch_size: 32,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("runs"),
        }
    }
}

/// Keys of a config file; absent keys leave the current value alone.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub group: Option<Group>,
    pub id: Option<u32>,
    pub scale: Option<usize>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }
}

impl RunConfig {
    pub fn apply(&mut self, file: ConfigFile) {
        let ConfigFile {
            group,
            id,
            scale,
            seed,
            epochs,
            batch_size,
            data_dir,
            run_dir,
        } = file;
        self.group = group.or(self.group);
        self.id = id.or(self.id);
        self.scale = scale.unwrap_or(self.scale);
        self.seed = seed.unwrap_or(self.seed);
        self.epochs = epochs.unwrap_or(self.epochs);
        self.batch_size = batch_size.unwrap_or(self.batch_size);
        self.data_dir = data_dir.unwrap_or_else(|| self.data_dir.clone());
        self.run_dir = run_dir.unwrap_or_else(|| self.run_dir.clone());
    }

    /// Applies path overrides from `lookup` (normally the process environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(p) = lookup(DATA_DIR_ENV).filter(|p| !p.is_empty()) {
            self.data_dir = PathBuf::from(p);
        }
        if let Some(p) = lookup(RUN_DIR_ENV).filter(|p| !p.is_empty()) {
            self.run_dir = PathBuf::from(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(CliError::Config("scale must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CliError::Config("batch size must be at least 1".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config("seed must be below 2^63".into()));
        }
        if self.id.is_some() && self.group.is_none() {
            return Err(CliError::Config("a dataset id needs a group".into()));
        }
        if let (Some(g), Some(id)) = (self.group, self.id) {
            if !g.dataset_ids().contains(&id) {
                return Err(CliError::Config(format!("group {} has no dataset {id}", g.letter())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        self.validate()?;
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    /// Datasets selected by `group` and `id`, in table order.
    pub fn scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        self.validate()?;
        let groups: Vec<Group> = match self.group {
            Some(g) => vec![g],
            None => Group::ALL.to_vec(),
        };
        let mut out = Vec::new();
        for g in groups {
            let ids: Vec<u32> = match self.id {
                Some(id) => vec![id],
                None => g.dataset_ids().collect(),
            };
            for id in ids {
                out.push(ScenarioConfig::table(g, id, self.scale, self.seed)?);
            }
        }
        Ok(out)
    }

    /// Seed of the stratified train/test split.
    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, 1)
    }

    /// Seed of the network's initial weights.
    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, 2)
    }

    /// Seed of shuffling and dropout.
    pub fn train_seed(&self) -> u64 {
        seed::derive(self.seed, 3)
    }
}
