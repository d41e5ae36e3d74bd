use std::collections::HashSet;
use std::path::{Path, PathBuf};

use acdc_core::architecture::ModelConfig;
use acdc_core::data::{mix64, DatasetSpec};
use acdc_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_eval_batch() -> usize {
    16
}

/// One JSON document describing a whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Training datasets, visited round-robin.
    pub datasets: Vec<DatasetSpec>,
    /// Held-out dataset for `eval` and `export`.
    #[serde(default)]
    pub eval: Option<DatasetSpec>,
    /// Run root. Commands write under `data/`, `train/`, `eval/`,
    /// `gradcheck/` and `export/` below it.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: invalid run config: {e}", path.display()))?;
        cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(cfg)
    }

    /// Everything that can be checked without touching data or weights.
    pub fn validate(&self) -> Result<(), String> {
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.train.lambdas.len() != self.model.stages {
            return Err(format!(
                "{} supervision weights for {} stages",
                self.train.lambdas.len(),
                self.model.stages
            ));
        }
        if self.datasets.is_empty() {
            return Err("at least one training dataset is required".into());
        }
        if self.eval_batch == 0 {
            return Err("eval_batch must be positive".into());
        }
        let mut names = HashSet::new();
        for d in self.all_datasets() {
            d.validate().map_err(|e| e.to_string())?;
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || d.name.starts_with('.') {
                return Err(format!("dataset name `{}` must be a plain file name", d.name));
            }
            if !names.insert(d.name.as_str()) {
                return Err(format!("dataset name `{}` is used twice", d.name));
            }
            let g = &d.generator;
            if g.image_size != self.model.image_size || g.markups != self.model.markups || g.markup_3d != self.model.markup_3d {
                return Err(format!(
                    "dataset `{}` generates {}px images with markups {:?} + 3d {}, the model expects {}px with {:?} + 3d {}",
                    d.name,
                    g.image_size,
                    g.markups,
                    g.markup_3d,
                    self.model.image_size,
                    self.model.markups,
                    self.model.markup_3d
                ));
            }
        }
        Ok(())
    }

    pub fn all_datasets(&self) -> impl Iterator<Item = &DatasetSpec> {
        self.datasets.iter().chain(self.eval.as_ref())
    }

    /// Replace the training seed and derive fresh dataset seeds from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.train.seed = seed;
        let specs = self.datasets.iter_mut().chain(self.eval.as_mut());
        for (i, d) in specs.enumerate() {
            d.seed = mix64(seed ^ mix64(i as u64 + 1));
        }
    }

    pub fn data_dir(&self, name: &str) -> PathBuf {
        self.output.join("data").join(name)
    }

    pub fn train_dir(&self) -> PathBuf {
        self.output.join("train")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.train_dir().join("model.acdc")
    }
}
