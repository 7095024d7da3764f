use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::seeds::{component_seed, Component};
use crate::error::{Error, Result};
use crate::model::{FieldLayout, HtlNet, ParamStore};
use crate::optim::{AdamState, GradientProcessor, OptimState, ProcessorState};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Complete training state: restoring it and continuing reproduces an
/// uninterrupted run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Kept as TOML text, which (unlike JSON) can hold infinite offsets.
    #[serde(with = "toml_text")]
    pub config: RunConfig,
    pub field_vocab: Vec<usize>,
    /// Optimisation steps completed.
    pub step: u64,
    pub params: BTreeMap<String, SavedTensor>,
    pub adam: AdamState,
    pub processor: ProcessorState,
    pub best_valid_nrmse: Option<f64>,
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        model: &HtlNet,
        state: &OptimState,
        step: u64,
        best_valid_nrmse: Option<f64>,
    ) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(name, t)| {
                let saved = SavedTensor {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                };
                (name.clone(), saved)
            })
            .collect();
        Self {
            config: config.clone(),
            field_vocab: model.layout().vocab().to_vec(),
            step,
            params,
            adam: state.adam.clone(),
            processor: state.processor.state().clone(),
            best_valid_nrmse,
        }
    }

    pub fn model(&self) -> Result<HtlNet> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            store.insert(name.clone(), Tensor::new(t.shape.clone(), t.data.clone())?);
        }
        HtlNet::from_parts(
            self.config.model.clone(),
            FieldLayout::new(self.field_vocab.clone())?,
            store,
        )
    }

    pub fn optim_state(&self) -> OptimState {
        let optim = &self.config.optim;
        OptimState {
            adam: self.adam.clone(),
            processor: GradientProcessor::with_state(
                optim.clone(),
                component_seed(self.config.seed, Component::Surgery),
                self.processor.clone(),
            ),
        }
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

mod toml_text {
    use serde::{de::Error as _, ser::Error as _, Deserialize, Deserializer, Serializer};

    use crate::run::RunConfig;

    pub fn serialize<S: Serializer>(cfg: &RunConfig, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&cfg.to_toml().map_err(S::Error::custom)?)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RunConfig, D::Error> {
        let text = String::deserialize(d)?;
        RunConfig::from_toml(&text).map_err(D::Error::custom)
    }
}
