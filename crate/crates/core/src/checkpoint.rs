//! JSON checkpoint container shared by the controller and the shared pool.
//!
//! Layout: `{"format", "version", "kind", "space", "dims": {name: int},
//! "tensors": [{"name", "rows", "cols", "data"}]}`. Floats are written in
//! shortest round-trip form, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cellspace::SearchSpace;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const FORMAT: &str = "enas-lab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub space: SearchSpace,
    pub dims: BTreeMap<String, usize>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, space: SearchSpace, dims: BTreeMap<String, usize>) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            kind: kind.to_string(),
            space,
            dims,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, m: &Matrix) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        });
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn dim(&self, name: &str) -> Result<usize> {
        self.dims
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing dim {name}")))
    }

    /// Takes the named tensor, checking its shape.
    pub fn tensor(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor {name} is {}x{}, expected {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        Matrix::from_vec(rows, cols, t.data.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
