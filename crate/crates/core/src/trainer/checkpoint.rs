use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::trainer::model::{Model, ModelConfig};
use crate::trainer::TrainConfig;

const FORMAT: &str = "longi-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter tensors with the configuration and seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// Scalar type the parameters were trained in.
    pub scalar: String,
    pub epoch: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(model: &Model<T>, train: &TrainConfig, epoch: usize) -> Self {
        let tensors = model
            .params
            .names()
            .iter()
            .zip(model.params.tensors())
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64_lossless()).collect(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            scalar: T::NAME.into(),
            epoch,
            model: model.config.clone(),
            train: train.clone(),
            tensors,
        }
    }

    /// Rebuilds the model and loads the stored values into it.
    pub fn restore<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::<T>::new(self.model.clone(), self.train.seed)?;
        let named = self
            .tensors
            .iter()
            .map(|nt| Ok((nt.name.clone(), Tensor::new(&nt.shape, nt.data.iter().map(|&v| T::of(v)).collect())?)))
            .collect::<Result<Vec<_>>>()?;
        model.params.load(named)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self =
            serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), msg: e.to_string() })?;
        if ck.format != FORMAT {
            return Err(Error::Format { path: path.into(), msg: format!("unsupported checkpoint format {:?}", ck.format) });
        }
        Ok(ck)
    }
}
