//! Parameter checkpoints.
//!
//! Layout (JSON, UTF-8):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "tensors": [ { "name": "lstm.w_ih", "shape": [10, 64], "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! `data` is the row-major flat array. Floats are written with the shortest
//! representation that parses back to the identical `f64`, so a save/load
//! cycle is lossless and the file bytes are a stable fingerprint of the
//! parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_tensors<'a>(items: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            tensors: items
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(TensorError::Checkpoint(format!(
                    "tensor {} has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let nt = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {name}")))?;
        Tensor::new(nt.shape.clone(), nt.data.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        Self::from_json(&text)
    }
}
