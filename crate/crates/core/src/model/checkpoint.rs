//! JSON checkpoints. `f64` values are written in shortest round-trip form,
//! so save/load is exact.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Tensors, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    format_version: u32,
    config: ModelConfig,
    tied_output: bool,
    freeze_embeddings: bool,
    embed_lr_scale: f64,
    seed: u64,
    tensors: BTreeMap<String, TensorRecord>,
}

impl ModelParams {
    pub fn to_json_value(&self) -> serde_json::Value {
        let tensors = TENSOR_NAMES
            .iter()
            .zip(self.tensors.shapes())
            .zip(self.tensors.slices())
            .map(|((name, shape), data)| {
                (
                    name.to_string(),
                    TensorRecord {
                        shape,
                        data: data.to_vec(),
                    },
                )
            })
            .collect();
        let record = ModelRecord {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config,
            tied_output: self.tied_output,
            freeze_embeddings: self.freeze_embeddings,
            embed_lr_scale: self.embed_lr_scale,
            seed: self.seed,
            tensors,
        };
        serde_json::to_value(record).expect("checkpoint serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("checkpoint serializes")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let mut record: ModelRecord = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
        if record.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format_version {}",
                record.format_version
            )));
        }
        record.config.validate()?;
        let mut tensors = Tensors::zeros(&record.config, record.tied_output);
        let shapes = tensors.shapes();
        for ((name, shape), slot) in TENSOR_NAMES.iter().zip(shapes).zip(tensors.slices_mut()) {
            let t = record
                .tensors
                .remove(*name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            if t.shape != shape || t.data.len() != slot.len() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
            slot.copy_from_slice(&t.data);
        }
        if let Some(extra) = record.tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor `{extra}`")));
        }
        if !tensors.all_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self {
            config: record.config,
            tied_output: record.tied_output,
            freeze_embeddings: record.freeze_embeddings,
            embed_lr_scale: record.embed_lr_scale,
            seed: record.seed,
            tensors,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_json_value(value)
    }
}

/// Parses an embedding table written one row per token (`V` rows of `M`
/// numbers), either as a JSON array of arrays or as whitespace-separated
/// lines. Returns it in `M x V` layout.
pub fn parse_embedding_table(text: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|x| x.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                    .collect()
            })
            .collect::<Result<_>>()?
    };
    let v = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if v == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidDimensions("ragged or empty embedding table".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let by_token = Array2::from_shape_vec((v, m), flat).expect("shape checked");
    Ok(by_token.t().as_standard_layout().into_owned())
}
