use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::StateMode;
use crate::learned_filters::{GainNetwork, NetConfig, Variant};
use crate::sie::SieConfig;

use super::TrainConfig;

pub const CHECKPOINT_SCHEMA: &str = "lakf-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Column-major values.
    pub values: Vec<f64>,
}

/// A trained network with enough context to rebuild and audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    pub variant: Variant,
    pub mode: StateMode,
    pub net: NetConfig,
    pub sie: Vec<SieConfig>,
    pub params: Vec<NamedTensor>,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub val_m_ar: Option<f64>,
}

impl Checkpoint {
    pub fn new(net: &GainNetwork, train: Option<TrainConfig>, epoch: usize, val_m_ar: Option<f64>) -> Self {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            variant: net.variant(),
            mode: net.mode(),
            net: *net.config(),
            sie: net.sie_configs(),
            params: net
                .params()
                .iter()
                .map(|(name, m)| NamedTensor {
                    name: name.to_string(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                    values: m.as_slice().to_vec(),
                })
                .collect(),
            train,
            epoch,
            val_m_ar,
        }
    }

    /// Rebuilds the network, checking every tensor against the architecture.
    pub fn network(&self) -> Result<GainNetwork> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(Error::format(
                "schema",
                format!("expected '{CHECKPOINT_SCHEMA}', found '{}'", self.schema),
            ));
        }
        if self.net.variant != self.variant || self.net.mode != self.mode {
            return Err(Error::format("net", "variant/mode disagree with the header"));
        }
        let named: Vec<(String, Vec<f64>)> = self
            .params
            .iter()
            .map(|t| (t.name.clone(), t.values.clone()))
            .collect();
        let net = GainNetwork::from_named(self.net, &named)?;
        for t in &self.params {
            let id = net.params().find(&t.name).expect("checked by from_named");
            if net.params().get(id).shape() != (t.rows, t.cols) {
                return Err(Error::format(
                    "params",
                    format!("tensor '{}' has shape {}x{}", t.name, t.rows, t.cols),
                ));
            }
        }
        if net.sie_configs() != self.sie {
            return Err(Error::format("sie", "encoder shapes disagree with the architecture"));
        }
        Ok(net)
    }

    /// Like [`Checkpoint::network`] but refuses a different state mode unless
    /// `allow_mismatch` is set, in which case the network is rebuilt for `mode`.
    pub fn network_for(&self, mode: StateMode, allow_mismatch: bool) -> Result<GainNetwork> {
        if mode == self.mode {
            return self.network();
        }
        if !allow_mismatch {
            return Err(Error::domain(format!(
                "checkpoint was trained in {} but {} was requested",
                self.mode, mode
            )));
        }
        let mut other = self.clone();
        other.mode = mode;
        other.net.mode = mode;
        other.network()
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    if ckpt.schema != CHECKPOINT_SCHEMA {
        return Err(Error::format(
            "schema",
            format!("expected '{CHECKPOINT_SCHEMA}', found '{}'", ckpt.schema),
        ));
    }
    Ok(ckpt)
}
