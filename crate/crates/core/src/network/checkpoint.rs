//! Checkpoint files are JSON objects:
//!
//! ```text
//! {
//!   "format": "apex-dqfd-checkpoint",
//!   "version": 1,
//!   "scalar": "f64",              // type the parameters were trained in
//!   "snapshot_k": 12,             // target-network refresh count at save time
//!   "architecture": {"input_dim": 64, "hidden": [64, 64], "n_actions": 4, "dueling": true},
//!   "env": "sparse_grid:8x8",     // optional environment the net was trained on
//!   "params": [ ... ]             // flat parameters as f64, layer by layer
//! }
//! ```
//!
//! Each dense layer contributes its weight matrix input-major (`w[i, o]` at
//! `i * out + o`) and then its `out` biases. Layers appear in order: hidden
//! layers, output (or advantage) head, then the value head when `dueling` is
//! set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "apex-dqfd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub snapshot_k: u64,
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, snapshot_k: u64, env: Option<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.to_string(),
            snapshot_k,
            architecture: net.architecture().clone(),
            env,
            params: net.params().iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                name: "checkpoint parameters".into(),
            });
        }
        Network::from_params(self.architecture.clone(), self.params.iter().map(|&p| T::of(p)).collect())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(checkpoint).map_err(|e| Error::InvalidState(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Validation {
            line: 1,
            message: format!("not a checkpoint file (format {:?})", ck.format),
        });
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Validation {
            line: 1,
            message: format!("unsupported checkpoint version {}", ck.version),
        });
    }
    ck.network::<f64>()?;
    Ok(ck)
}
