//! Model checkpoints.
//!
//! A checkpoint is a single JSON document:
//!
//! ```json
//! {
//!   "format": "rkhs-mmd-checkpoint",
//!   "version": 1,
//!   "seed": 0,
//!   "layer_dims": [2, 64, 32, 2],
//!   "class_names": ["0", "1"],
//!   "layers": [
//!     {"activation": "relu", "weights": [[...], ...], "bias": [...]},
//!     ...
//!   ]
//! }
//! ```
//!
//! `weights` is row-major `d_in × d_out`. Floats are written in shortest
//! round-trip form, so save → load reproduces every parameter bit for bit.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, Layer, MlpModel};

pub const FORMAT: &str = "rkhs-mmd-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub class_names: Vec<String>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    format: String,
    version: u32,
    seed: u64,
    layer_dims: Vec<usize>,
    class_names: Vec<String>,
    layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let record = CheckpointRecord {
            format: FORMAT.into(),
            version: VERSION,
            seed: self.seed,
            layer_dims: self.model.layer_dims(),
            class_names: self.class_names.clone(),
            layers: self
                .model
                .layers
                .iter()
                .map(|l| LayerRecord {
                    activation: l.activation,
                    weights: l.weights.outer_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&record).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: CheckpointRecord =
            serde_json::from_str(text).map_err(|e| Error::input(format!("checkpoint: {e}")))?;
        if record.format != FORMAT {
            return Err(Error::input(format!("not a checkpoint: format {:?}", record.format)));
        }
        if record.version != VERSION {
            return Err(Error::input(format!(
                "unsupported checkpoint version {}",
                record.version
            )));
        }
        let layers = record
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let d_in = l.weights.len();
                let d_out = l.bias.len();
                if l.weights.iter().any(|r| r.len() != d_out) {
                    return Err(Error::input(format!("checkpoint layer {i}: ragged weights")));
                }
                let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
                Ok(Layer {
                    weights: Array2::from_shape_vec((d_in, d_out), flat)
                        .map_err(|e| Error::input(e.to_string()))?,
                    bias: Array1::from(l.bias),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = MlpModel::new(layers)?;
        if model.layer_dims() != record.layer_dims {
            return Err(Error::input("checkpoint layer_dims disagree with stored layers"));
        }
        if record.class_names.len() != model.n_classes() {
            return Err(Error::input("checkpoint class_names disagree with output width"));
        }
        Ok(Checkpoint {
            model,
            class_names: record.class_names,
            seed: record.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
