//! Network checkpoints.
//!
//! A checkpoint is a JSON object:
//!
//! ```json
//! {
//!   "format": "sparse-bnn-checkpoint",
//!   "version": 1,
//!   "arch": { "widths": [p, L1, ..., 1], "activation": "tanh", "task": "regression" },
//!   "seed": 7,
//!   "beta": [ ... K floats in canonical order ... ],
//!   "gamma": "0110…"
//! }
//! ```
//!
//! `beta` follows the ordering documented in [`crate::net`]; `gamma` holds
//! one `0`/`1` character per entry of `beta`. Floats are written in their
//! shortest round-trip form, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Arch, Mask, ParamVector};

pub const CHECKPOINT_FORMAT: &str = "sparse-bnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Arch,
    pub beta: ParamVector,
    pub mask: Mask,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: Arch,
    seed: u64,
    beta: Vec<f64>,
    gamma: String,
}

impl Checkpoint {
    pub fn new(arch: Arch, beta: ParamVector, mask: Mask, seed: u64) -> Result<Self> {
        if beta.len() != arch.n_params() || mask.len() != arch.n_params() {
            return Err(Error::Shape(format!(
                "checkpoint vectors have {} and {} entries, architecture has {}",
                beta.len(),
                mask.len(),
                arch.n_params()
            )));
        }
        Ok(Checkpoint { arch, beta, mask, seed })
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            seed: self.seed,
            beta: self.beta.as_slice().to_vec(),
            gamma: self.mask.to_bit_string(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            message,
        };
        if file.format != CHECKPOINT_FORMAT {
            return Err(schema(format!("format is {:?}, expected {CHECKPOINT_FORMAT:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(schema(format!("unsupported checkpoint version {}", file.version)));
        }
        let beta = ParamVector::from_flat(&file.arch, file.beta).map_err(|e| schema(e.to_string()))?;
        let mask = Mask::from_bit_string(&file.arch, &file.gamma).map_err(|e| schema(e.to_string()))?;
        Ok(Checkpoint {
            arch: file.arch,
            beta,
            mask,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }
}
