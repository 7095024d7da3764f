use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    chronological_split, infer_schema, load_table, synth_generate, Dataset, Schema, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::model::HtlNetConfig;
use crate::optim::OptimConfig;

/// Everything one experiment needs. Serialised as TOML with `[data]`,
/// `[model]`, `[optim]` and `[train]` sections; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: HtlNetConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: HtlNetConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// A table on disk, or the synthetic funnel when `path` is unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Column names; inferred from an `f<i>`/`y<t>`/`core`/`ts` header when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    /// Per-field vocabulary sizes; inferred from the table when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_vocab: Option<Vec<usize>>,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            schema: None,
            field_vocab: None,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<Dataset> {
        match &self.path {
            Some(path) => {
                let schema = match &self.schema {
                    Some(s) => s.clone(),
                    None => infer_schema(path)?,
                };
                load_table(path, &schema, self.field_vocab.as_deref())
            }
            None => Ok(synth_generate(&self.synthetic)?.dataset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Validate every this many steps as well as at each epoch end (0: epoch ends only).
    pub eval_every: u64,
    /// Write the resumable checkpoint every this many steps as well as at
    /// each epoch end (0: epoch ends only).
    pub checkpoint_every: u64,
    /// Seeds per variant in ablation runs.
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 1,
            eval_every: 0,
            checkpoint_every: 0,
            repeats: 10,
        }
    }
}

/// Train, validation and test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn chronological(dataset: &Dataset) -> Result<Self> {
        let (train, valid, test) = chronological_split(dataset)?;
        Ok(Self { train, valid, test })
    }

    pub fn get(&self, name: &str) -> Result<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::config(format!(
                "unknown split `{other}`; expected train, valid or test"
            ))),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::config("train: batch_size must be positive"));
        }
        if self.train.repeats == 0 {
            return Err(Error::config("train: repeats must be at least 1"));
        }
        if self.data.path.is_none() {
            self.data.synthetic.validate()?;
            let steps = self.data.synthetic.num_tasks();
            if steps != self.model.num_tasks {
                return Err(Error::config(format!(
                    "model.num_tasks = {} but the synthetic funnel has {steps} steps",
                    self.model.num_tasks
                )));
            }
        }
        Ok(())
    }

    /// Loads the data, checks it against the model and splits it.
    pub fn prepare(&self) -> Result<Splits> {
        let dataset = self.data.load()?;
        if dataset.num_tasks() != self.model.num_tasks {
            return Err(Error::config(format!(
                "model.num_tasks = {} but the data has {} label columns",
                self.model.num_tasks,
                dataset.num_tasks()
            )));
        }
        Splits::chronological(&dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("[model]") && text.contains("[optim]") && text.contains("[train]"));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[optim]\nmode = \"none\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 1024);
        assert_eq!(cfg.model.tower_units, vec![128, 64, 32]);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::from_toml("[optim]\ndisable_projecton = true\n").is_err());
        assert!(RunConfig::from_toml("sed = 1\n").is_err());
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(RunConfig::from_toml("[optim]\nclip = 0.5\n").is_err());
        assert!(RunConfig::from_toml("[model]\nnum_tasks = 3\n").is_err());
        assert!(RunConfig::from_toml("[train]\nbatch_size = 0\n").is_err());
    }

    #[test]
    fn infinite_offsets_survive_the_echo() {
        let mut cfg = RunConfig::default();
        cfg.data.synthetic.offsets = Some(vec![f64::NEG_INFINITY, -1.0]);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
