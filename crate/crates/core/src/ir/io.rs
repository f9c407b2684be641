//! On-disk model container: `manifest.json` plus one little-endian blob per tensor,
//! named `<layer_id>.<role>.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{LayerNode, ModelGraph, Op};
use super::quant::QuantParams;
use super::tensor::{DType, TensorBuffer};
use crate::error::{Error, Result};

pub const IR_VERSION: u64 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Wf,
    Wq,
    Bf,
    Bq,
}

impl TensorRole {
    fn as_str(self) -> &'static str {
        match self {
            TensorRole::Wf => "wf",
            TensorRole::Wq => "wq",
            TensorRole::Bf => "bf",
            TensorRole::Bq => "bq",
        }
    }
}

pub fn blob_name(layer_id: &str, role: TensorRole) -> String {
    format!("{layer_id}.{}.bin", role.as_str())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub role: TensorRole,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputEntry {
    id: String,
    shape: Vec<usize>,
    qp: QuantParams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    id: String,
    op: Op,
    inputs: Vec<String>,
    input_qp: QuantParams,
    output_qp: QuantParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_qp: Option<QuantParams>,
    #[serde(default)]
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    ir_version: u64,
    input: InputEntry,
    output_id: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    layers: Vec<LayerEntry>,
}

#[derive(Deserialize)]
struct VersionProbe {
    ir_version: u64,
}

pub(crate) fn json_error(file: &Path, e: serde_json::Error) -> Error {
    Error::parse(
        format!("{}:{}:{}", file.display(), e.line(), e.column()),
        e.to_string(),
    )
}

pub(crate) fn write_blob(path: &Path, t: &TensorBuffer) -> Result<()> {
    fs::write(path, t.to_le_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_blob(path: &Path, dtype: DType, shape: &[usize]) -> Result<TensorBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorBuffer::from_le_bytes(shape.to_vec(), dtype, &bytes)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn save_model(graph: &ModelGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(graph.layers.len());
    for layer in &graph.layers {
        let mut tensors = Vec::new();
        for (role, t) in [
            (TensorRole::Wf, &layer.weights_float),
            (TensorRole::Wq, &layer.weights_quant),
            (TensorRole::Bf, &layer.bias_float),
            (TensorRole::Bq, &layer.bias_quant),
        ] {
            if let Some(t) = t {
                let file = blob_name(&layer.id, role);
                write_blob(&dir.join(&file), t)?;
                tensors.push(TensorEntry { role, dtype: t.dtype(), shape: t.shape().to_vec(), file });
            }
        }
        layers.push(LayerEntry {
            id: layer.id.clone(),
            op: layer.op,
            inputs: layer.inputs.clone(),
            input_qp: layer.input_qp,
            output_qp: layer.output_qp,
            weight_qp: layer.weight_qp,
            tensors,
        });
    }
    let manifest = Manifest {
        ir_version: IR_VERSION,
        input: InputEntry {
            id: graph.input_id.clone(),
            shape: graph.input_shape.clone(),
            qp: graph.input_qp,
        },
        output_id: graph.output_id.clone(),
        metadata: graph.metadata.clone(),
        layers,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelGraph> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| json_error(&path, e))?;
    if probe.ir_version != IR_VERSION {
        return Err(Error::VersionMismatch { found: probe.ir_version, expected: IR_VERSION });
    }
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| json_error(&path, e))?;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in manifest.layers {
        let mut slots: [Option<TensorBuffer>; 4] = Default::default();
        for t in &entry.tensors {
            let expected = blob_name(&entry.id, t.role);
            if t.file != expected {
                return Err(Error::parse(
                    format!("{}: layer {}", path.display(), entry.id),
                    format!("tensor file {} should be named {expected}", t.file),
                ));
            }
            let slot = &mut slots[t.role as usize];
            if slot.is_some() {
                return Err(Error::parse(
                    format!("{}: layer {}", path.display(), entry.id),
                    format!("duplicate tensor role {}", t.role.as_str()),
                ));
            }
            *slot = Some(read_blob(&dir.join(&t.file), t.dtype, &t.shape)?);
        }
        let [wf, wq, bf, bq] = slots;
        layers.push(LayerNode {
            id: entry.id,
            op: entry.op,
            inputs: entry.inputs,
            weights_float: wf,
            weights_quant: wq,
            weight_qp: entry.weight_qp,
            bias_float: bf,
            bias_quant: bq,
            input_qp: entry.input_qp,
            output_qp: entry.output_qp,
        });
    }
    Ok(ModelGraph {
        input_id: manifest.input.id,
        input_shape: manifest.input.shape,
        input_qp: manifest.input.qp,
        layers,
        output_id: manifest.output_id,
        metadata: manifest.metadata,
    })
}
