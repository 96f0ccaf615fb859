use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::encoders::ModelConfig;
use crate::numkit::ScheduleConfig;
use crate::objectives::{ObjectiveConfig, ObjectiveFlags};

/// Pre-training run description, read from TOML. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Corpus directory (manifest, vocabulary, `images/`, `ocr/`).
    pub corpus: PathBuf,
    /// Run directory for the loss curve and checkpoints.
    pub out_dir: PathBuf,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps; the last step is always saved.
    /// Zero saves only the last step.
    pub checkpoint_interval: usize,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub objectives: ObjectiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus"),
            out_dir: PathBuf::from("run"),
            batch_size: 4,
            seed: 0,
            checkpoint_interval: 100,
            schedule: ScheduleConfig { total_steps: 300, ..ScheduleConfig::default() },
            model: ModelConfig::default(),
            objectives: ObjectiveConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything except the model vocabulary, which may be left at 0
    /// and filled in from the corpus.
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        self.schedule.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.objectives.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let model = ModelConfig { vocab_size: self.model.vocab_size.max(1), ..self.model.clone() };
        model.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Incremental objective sets: MLM, then +MRM, +TRC and finally +TGM.
pub fn ablation_ladder() -> [(&'static str, ObjectiveFlags); 4] {
    let mlm = ObjectiveFlags { mlm: true, ..ObjectiveFlags::NONE };
    let mrm = ObjectiveFlags { mrm: true, ..mlm };
    let trc = ObjectiveFlags { trc: true, ..mrm };
    [("mlm", mlm), ("mlm+mrm", mrm), ("mlm+mrm+trc", trc), ("all", ObjectiveFlags::ALL)]
}
