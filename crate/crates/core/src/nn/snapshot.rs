//! JSON parameter snapshots.
//!
//! Layout (stable):
//!
//! ```json
//! { "format": "pcada-params/1",
//!   "tensors": [ { "name": "phi.layers.0.weight", "shape": [2, 16], "data": [..] }, .. ] }
//! ```
//!
//! `data` is row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle is bitwise exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SNAPSHOT_FORMAT: &str = "pcada-params/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub format: String,
    pub tensors: Vec<NamedTensor>,
}

impl ParamSnapshot {
    pub fn new(tensors: Vec<NamedTensor>) -> Self {
        Self {
            format: SNAPSHOT_FORMAT.to_string(),
            tensors,
        }
    }

    pub fn get(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Input(format!("snapshot has no tensor `{name}`")))?;
        if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: ParamSnapshot = serde_json::from_str(&text)?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Input(format!(
                "unsupported snapshot format `{}`",
                snap.format
            )));
        }
        Ok(snap)
    }
}
