use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{json_error, read_blob, write_blob, write_json, DType, ModelGraph, TensorBuffer, MANIFEST};

/// Per-layer outputs of one inference, in layer order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTrace {
    outputs: Vec<(String, TensorBuffer)>,
}

impl ActivationTrace {
    pub(crate) fn push(&mut self, id: &str, t: TensorBuffer) {
        self.outputs.push((id.to_string(), t));
    }

    pub fn get(&self, id: &str) -> Option<&TensorBuffer> {
        self.outputs.iter().find(|(k, _)| k == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorBuffer)> {
        self.outputs.iter().map(|(k, t)| (k.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Real-valued view: float traces pass through, integer traces are
    /// dequantized with each layer's output params from `graph`.
    pub fn real_values(&self, graph: &ModelGraph) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
        self.outputs
            .iter()
            .map(|(id, t)| {
                let vals = if t.dtype() == DType::F32 {
                    t.to_f64_vec()
                } else {
                    let qp = graph
                        .layer(id)
                        .map(|l| l.output_qp)
                        .ok_or_else(|| Error::TopologyMismatch(format!("trace layer {id} not in graph")))?;
                    t.to_i32_vec().unwrap().into_iter().map(|q| qp.dequantize_value(q)).collect()
                };
                Ok((id.clone(), t.shape().to_vec(), vals))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceEntry {
    id: String,
    dtype: DType,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceManifest {
    trace_version: u64,
    layers: Vec<TraceEntry>,
}

/// Writes `manifest.json` plus `<layer_id>.out.bin` per layer.
pub fn save_trace(trace: &ActivationTrace, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::new();
    for (id, t) in trace.iter() {
        let file = format!("{id}.out.bin");
        write_blob(&dir.join(&file), t)?;
        layers.push(TraceEntry { id: id.to_string(), dtype: t.dtype(), shape: t.shape().to_vec(), file });
    }
    write_json(&dir.join(MANIFEST), &TraceManifest { trace_version: 1, layers })
}

pub fn load_trace(dir: impl AsRef<Path>) -> Result<ActivationTrace> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: TraceManifest = serde_json::from_str(&text).map_err(|e| json_error(&path, e))?;
    if m.trace_version != 1 {
        return Err(Error::VersionMismatch { found: m.trace_version, expected: 1 });
    }
    let mut trace = ActivationTrace::default();
    for e in m.layers {
        trace.push(&e.id, read_blob(&dir.join(&e.file), e.dtype, &e.shape)?);
    }
    Ok(trace)
}
