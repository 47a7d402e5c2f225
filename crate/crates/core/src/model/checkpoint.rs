//! Versioned JSON checkpoints: model kind, configuration and named tensors.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineConfig, Forecast, Forecaster, ModelConfig, RecurrentBaseline};
use crate::features::FeatureWindow;
use crate::numcore::{Binding, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ive-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config")]
enum Architecture {
    #[serde(rename = "transformer")]
    Transformer(ModelConfig),
    #[serde(rename = "recurrent")]
    Recurrent(BaselineConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    architecture: Architecture,
    tensors: BTreeMap<String, Tensor>,
}

/// Either forecaster family, as restored from a checkpoint.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Transformer(Forecaster),
    Recurrent(RecurrentBaseline),
}

impl AnyModel {
    fn inner(&self) -> &dyn Forecast {
        match self {
            AnyModel::Transformer(m) => m,
            AnyModel::Recurrent(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Forecast {
        match self {
            AnyModel::Transformer(m) => m,
            AnyModel::Recurrent(m) => m,
        }
    }

    pub fn as_transformer(&self) -> Option<&Forecaster> {
        match self {
            AnyModel::Transformer(m) => Some(m),
            AnyModel::Recurrent(_) => None,
        }
    }
}

impl Forecast for AnyModel {
    fn label(&self) -> String {
        self.inner().label()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn horizon(&self) -> usize {
        self.inner().horizon()
    }

    fn sample_loss(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        window: &FeatureWindow,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.inner().sample_loss(tape, binding, window, rng)
    }

    fn point_forecast(&self, window: &FeatureWindow) -> Result<Vec<f64>> {
        self.inner().point_forecast(window)
    }
}

impl From<Forecaster> for AnyModel {
    fn from(m: Forecaster) -> Self {
        AnyModel::Transformer(m)
    }
}

impl From<RecurrentBaseline> for AnyModel {
    fn from(m: RecurrentBaseline) -> Self {
        AnyModel::Recurrent(m)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &AnyModel) -> Result<()> {
    let path = path.as_ref();
    let architecture = match model {
        AnyModel::Transformer(m) => Architecture::Transformer(m.config().clone()),
        AnyModel::Recurrent(m) => Architecture::Recurrent(m.config().clone()),
    };
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture,
        tensors: model.params().to_named(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unexpected format `{}`",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    let mut store = ParamStore::new();
    for (name, t) in file.tensors {
        store.register(name, t);
    }
    Ok(match file.architecture {
        Architecture::Transformer(cfg) => {
            AnyModel::Transformer(Forecaster::from_parts(cfg, store)?)
        }
        Architecture::Recurrent(cfg) => {
            AnyModel::Recurrent(RecurrentBaseline::from_parts(cfg, store)?)
        }
    })
}
