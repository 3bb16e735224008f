//! Versioned checkpoint container shared by the analysis network and the
//! neural proxy. Weights are stored as 32-bit floats in a structured-text
//! (JSON) file; loading validates shape compatibility.

use crate::error::{Error, Result};
use crate::loss::MelConfig;
use crate::nn::Mlp;
use crate::params::ParamSpec;
use crate::proxy::{ProxyConfig, ProxyModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpWeights {
    pub sizes: Vec<usize>,
    pub weights: Vec<f32>,
    pub running_mean: Vec<Vec<f32>>,
    pub running_var: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyWeights {
    pub config: ProxyConfig,
    pub weights: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub chain_id: String,
    pub mel: Option<MelConfig>,
    pub param_specs: Vec<ParamSpec>,
    pub clip_len: Option<usize>,
    pub mlp: Option<MlpWeights>,
    pub proxy: Option<ProxyWeights>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::CheckpointMismatch(format!("unreadable checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// Captures an MLP's weights at 32-bit precision.
pub fn mlp_to_weights(mlp: &Mlp) -> MlpWeights {
    MlpWeights {
        sizes: mlp.sizes.clone(),
        weights: mlp.params.iter().map(|&v| v as f32).collect(),
        running_mean: mlp
            .running_mean
            .iter()
            .map(|v| v.iter().map(|&x| x as f32).collect())
            .collect(),
        running_var: mlp
            .running_var
            .iter()
            .map(|v| v.iter().map(|&x| x as f32).collect())
            .collect(),
    }
}

/// Rebuilds an MLP from stored weights, checking every shape.
pub fn mlp_from_weights(w: &MlpWeights) -> Result<Mlp> {
    let mut mlp = Mlp::new(&w.sizes, 0);
    if mlp.params.len() != w.weights.len() {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} weights for sizes {:?}, found {}",
            mlp.params.len(),
            w.sizes,
            w.weights.len()
        )));
    }
    mlp.params = w.weights.iter().map(|&v| v as f64).collect();
    if w.running_mean.len() != mlp.running_mean.len()
        || w.running_var.len() != mlp.running_var.len()
    {
        return Err(Error::CheckpointMismatch(
            "running-statistics layer count differs".into(),
        ));
    }
    for (l, (m, v)) in w.running_mean.iter().zip(&w.running_var).enumerate() {
        if m.len() != mlp.running_mean[l].len() || v.len() != mlp.running_var[l].len() {
            return Err(Error::CheckpointMismatch(format!(
                "running-statistics width differs at layer {l}"
            )));
        }
        mlp.running_mean[l] = m.iter().map(|&x| x as f64).collect();
        mlp.running_var[l] = v.iter().map(|&x| x as f64).collect();
    }
    Ok(mlp)
}

pub fn proxy_to_weights(model: &ProxyModel) -> ProxyWeights {
    ProxyWeights {
        config: model.config.clone(),
        weights: model.params.iter().map(|&v| v as f32).collect(),
    }
}

pub fn proxy_from_weights(w: &ProxyWeights) -> Result<ProxyModel> {
    let mut model = ProxyModel::new(&w.config, 0);
    if model.params.len() != w.weights.len() {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} proxy weights, found {}",
            model.params.len(),
            w.weights.len()
        )));
    }
    model.params = w.weights.iter().map(|&v| v as f64).collect();
    Ok(model)
}
