//! Run configuration: one TOML file, every section optional.
//!
//! ```toml
//! seed = 7
//! out = "runs/default"
//!
//! [data]
//! train_fraction = 0.714
//! persons = 175
//!
//! [train]
//! epochs = 40
//! ```
//!
//! The hash of the resolved configuration (after command-line overrides)
//! identifies a run and is stamped into every artifact it writes.

use std::path::{Path, PathBuf};

use oralscan_core::dataset::SyntheticConfig;
use oralscan_core::eval::{MatchCriterion, OperatingPolicy};
use oralscan_core::model::{ArchConfig, DecodeConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Share of persons assigned to the training split.
    pub train_fraction: f64,
    #[serde(flatten)]
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_fraction: 500.0 / 700.0,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EvalConfig {
    pub criterion: MatchCriterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub addr: String,
    pub brush_radius: f64,
    pub max_upload_bytes: usize,
    /// Suggestion catalog JSON; the built-in placeholder text when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            brush_radius: 1.5,
            max_upload_bytes: 16 * 1024 * 1024,
            catalog: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed for data generation and the person split.
    pub seed: u64,
    /// Root directory holding every stage's outputs.
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub calibration: OperatingPolicy,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: ArchConfig::default(),
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                seed: 2,
                ..TrainConfig::fine_tune()
            },
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            calibration: OperatingPolicy::default(),
            serve: ServeConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Read a TOML config, or the resolved config embedded in a manifest
    /// when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let config = if is_json {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: not a run manifest: {e}", path.display())))?;
            m.config
        } else {
            Self::from_toml(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        };
        Ok(config)
    }

    /// Parse a possibly partial TOML config. Omitted keys take their values
    /// from [`RunConfig::default`] at every depth, so a `[finetune]` table
    /// that only sets `epochs` keeps the fine-tuning seed and learning rate.
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let given: toml::Table = toml::from_str(text)?;
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("default config serializes");
        merge(&mut merged, given);
        merged.try_into()
    }

    /// A command-line seed replaces the data seed and both training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(CliError::config("data.train_fraction must lie strictly between 0 and 1"));
        }
        self.data.synthetic.validate()?;
        self.model.validate()?;
        if self.model.input_size != self.data.synthetic.image_size {
            return Err(CliError::config(format!(
                "model.input_size {} differs from data.image_size {}",
                self.model.input_size, self.data.synthetic.image_size
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 over the canonical JSON form. The output root is excluded so
    /// that moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.dir_name())
    }
}

/// Pipeline stages, each owning one directory under the output root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Data,
    Baseline,
    Enhanced,
    Eval,
    Calibration,
    Infer,
    Sessions,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Baseline => "baseline",
            Stage::Enhanced => "enhanced",
            Stage::Eval => "eval",
            Stage::Calibration => "calibration",
            Stage::Infer => "infer",
            Stage::Sessions => "sessions",
        }
    }

    /// The subcommand that produces this stage's artifacts.
    pub fn producer(self) -> &'static str {
        match self {
            Stage::Data => "gen-data",
            Stage::Baseline => "train",
            Stage::Enhanced => "finetune",
            Stage::Eval => "eval",
            Stage::Calibration => "calibrate",
            Stage::Infer => "infer",
            Stage::Sessions => "serve",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_tables_keep_section_defaults() {
        let cfg = RunConfig::from_toml("[finetune]\nepochs = 3\n[train.loss]\ncoord_weight = 2.0\n").unwrap();
        let default = RunConfig::default();
        assert_eq!(cfg.finetune.epochs, 3);
        assert_eq!(cfg.finetune.seed, default.finetune.seed);
        assert_eq!(cfg.finetune.learning_rate, default.finetune.learning_rate);
        assert_eq!(cfg.finetune.augment, None);
        assert_eq!(cfg.train.loss.coord_weight, 2.0);
        assert_eq!(cfg.train.loss.noobj_weight, default.train.loss.noobj_weight);
        assert_eq!(cfg.train.augment, default.train.augment);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[train]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.batch_size, RunConfig::default().train.batch_size);
        assert_eq!(cfg.finetune, RunConfig::default().finetune);
    }

    #[test]
    fn hash_ignores_output_root_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), a.clone().with_seed(8).hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_mismatched_sizes() {
        let mut cfg = RunConfig::default();
        cfg.model.input_size = 32;
        assert_eq!(cfg.validate().unwrap_err().category(), "config");
    }
}
