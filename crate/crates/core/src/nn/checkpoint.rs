//! JSON model checkpoints.
//!
//! ```json
//! {
//!   "format": "tumorscan-checkpoint",
//!   "version": 1,
//!   "network":    { "input": {...}, "layers": [...], "seed": 0 },
//!   "params":     [ { "shape": [3, 3, 1, 16], "values": [...] }, ... ],
//!   "batch_norm": [ { "running_mean": [...], "running_var": [...],
//!                     "momentum": 0.9, "epsilon": 1e-5 }, ... ],
//!   "optimizer":  { "config": {...}, "step_count": 0,
//!                   "first_moment": [[...]], "second_moment": [[...]] } | null
//! }
//! ```
//!
//! `params` and `batch_norm` follow the network's depth-first layer order
//! (inside a residual block: inner layers, then the projection). Floats
//! are written in shortest round-trip form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::layers::{Network, NetworkConfig};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "tumorscan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormRecord {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkConfig,
    pub params: Vec<TensorRecord>,
    pub batch_norm: Vec<BatchNormRecord>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn capture(net: &Network, optimizer: Option<&AdamState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            network: net.config().clone(),
            params: net
                .params()
                .iter()
                .map(|p| TensorRecord {
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
            batch_norm: net
                .bn_states()
                .iter()
                .map(|s| BatchNormRecord {
                    running_mean: s.running_mean.clone(),
                    running_var: s.running_var.clone(),
                    momentum: s.momentum,
                    epsilon: s.epsilon,
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuilds the network and copies every stored tensor into it.
    pub fn restore(&self) -> Result<Network> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container `{}` v{}",
                self.format, self.version
            )));
        }
        let mut net = Network::new(self.network.clone())?;
        {
            let mut params = net.params_mut();
            if params.len() != self.params.len() {
                return Err(Error::Checkpoint(format!(
                    "network has {} parameter tensors, checkpoint has {}",
                    params.len(),
                    self.params.len()
                )));
            }
            for (i, (p, rec)) in params.iter_mut().zip(&self.params).enumerate() {
                if p.value.shape() != rec.shape.as_slice() || rec.values.len() != p.value.len() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {i}: network shape {:?}, checkpoint shape {:?}",
                        p.value.shape(),
                        rec.shape
                    )));
                }
                p.value.data_mut().copy_from_slice(&rec.values);
            }
        }
        let mut states = net.bn_states_mut();
        if states.len() != self.batch_norm.len() {
            return Err(Error::Checkpoint("batch-norm layer count differs".into()));
        }
        for (s, rec) in states.iter_mut().zip(&self.batch_norm) {
            if s.running_mean.len() != rec.running_mean.len()
                || s.running_var.len() != rec.running_var.len()
            {
                return Err(Error::Checkpoint("batch-norm channel count differs".into()));
            }
            s.running_mean.clone_from(&rec.running_mean);
            s.running_var.clone_from(&rec.running_var);
            s.momentum = rec.momentum;
            s.epsilon = rec.epsilon;
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_json(&text)
    }
}
