//! Calibration inputs and the per-channel output expectations used by bias correction.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{run, ExecPath};
use crate::ir::{json_error, read_blob, write_blob, write_json, DType, ModelGraph, TensorBuffer};

pub const CALIB_MANIFEST: &str = "calib_manifest.json";

/// Default number of calibration inputs.
pub const DEFAULT_CALIBRATION_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    inputs: Vec<TensorBuffer>,
    labels: Option<Vec<usize>>,
}

impl CalibrationSet {
    pub fn new(inputs: Vec<TensorBuffer>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = inputs.first().ok_or(Error::EmptyCalibration)?;
        for (index, t) in inputs.iter().enumerate() {
            if t.shape() != first.shape() || t.dtype() != DType::F32 {
                return Err(Error::ShapeInconsistency {
                    index,
                    expected: first.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(l) = &labels {
            if l.len() != inputs.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} labels for {} calibration inputs",
                    l.len(),
                    inputs.len()
                )));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn inputs(&self) -> &[TensorBuffer] {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.inputs[0].shape()
    }

    /// First `n` inputs (and labels).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(self.inputs[..n].to_vec(), self.labels.as_ref().map(|l| l[..n].to_vec()))
    }
}

#[derive(Serialize, Deserialize)]
struct CalibManifest {
    shape: Vec<usize>,
    dtype: DType,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

pub fn save_calibration(set: &CalibrationSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, t) in set.inputs.iter().enumerate() {
        write_blob(&dir.join(format!("input_{k}.bin")), t)?;
    }
    let m = CalibManifest {
        shape: set.shape().to_vec(),
        dtype: DType::F32,
        count: set.len(),
        labels: set.labels.clone(),
    };
    write_json(&dir.join(CALIB_MANIFEST), &m)
}

pub fn load_calibration(dir: impl AsRef<Path>) -> Result<CalibrationSet> {
    let dir = dir.as_ref();
    let path = dir.join(CALIB_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CalibManifest = serde_json::from_str(&text).map_err(|e| json_error(&path, e))?;
    if m.dtype != DType::F32 {
        return Err(Error::parse(path.display().to_string(), "calibration inputs must be f32"));
    }
    let mut inputs = Vec::with_capacity(m.count);
    for k in 0..m.count {
        let blob = dir.join(format!("input_{k}.bin"));
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let n = bytes.len() / 4;
        let expected: usize = m.shape.iter().product();
        if n != expected || bytes.len() % 4 != 0 {
            // a blob of the wrong size is a shape disagreement with the manifest
            return Err(Error::ShapeInconsistency { index: k, expected: m.shape.clone(), found: vec![n] });
        }
        inputs.push(read_blob(&blob, DType::F32, &m.shape)?);
    }
    CalibrationSet::new(inputs, m.labels)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-output-channel mean of every layer's real-valued output, reduced over
/// batch and spatial positions, in layer order.
pub fn channel_means(graph: &ModelGraph, calib: &CalibrationSet, path: ExecPath) -> Result<Vec<(String, Vec<f64>)>> {
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut sums: Vec<(String, Vec<CompensatedSum>, usize)> = Vec::new();
    for input in calib.inputs() {
        let trace = run(graph, input, path)?;
        let real = trace.real_values(graph)?;
        if sums.is_empty() {
            sums = real
                .iter()
                .map(|(id, shape, _)| (id.clone(), vec![CompensatedSum::default(); *shape.last().unwrap()], 0))
                .collect();
        }
        for ((_, acc, count), (_, shape, vals)) in sums.iter_mut().zip(&real) {
            let c = *shape.last().unwrap();
            for (i, v) in vals.iter().enumerate() {
                acc[i % c].add(*v);
            }
            *count += vals.len() / c;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(id, acc, count)| (id, acc.iter().map(|s| s.value() / count as f64).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub id: String,
    /// `E[T_o]` per output channel.
    pub mean_float: Vec<f64>,
    /// `E[S_o (q_o - Z_o)]` per output channel.
    pub mean_quant_dequant: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layers: Vec<ChannelStats>,
}

impl LayerStats {
    pub fn get(&self, id: &str) -> Option<&ChannelStats> {
        self.layers.iter().find(|s| s.id == id)
    }
}

/// Float and integer output expectations of one graph.
pub fn collect_stats(graph: &ModelGraph, calib: &CalibrationSet) -> Result<LayerStats> {
    collect_stats_against(graph, graph, calib)
}

/// Float expectations from `reference`, integer expectations from `graph`.
pub fn collect_stats_against(
    reference: &ModelGraph,
    graph: &ModelGraph,
    calib: &CalibrationSet,
) -> Result<LayerStats> {
    let float = channel_means(reference, calib, ExecPath::Float)?;
    let quant = channel_means(graph, calib, ExecPath::Quant)?;
    let mut layers = Vec::with_capacity(quant.len());
    for (id, mq) in quant {
        let mf = float
            .iter()
            .find(|(fid, _)| *fid == id)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::TopologyMismatch(format!("layer {id} missing from reference")))?;
        if mf.len() != mq.len() {
            return Err(Error::TopologyMismatch(format!("layer {id} channel count differs")));
        }
        layers.push(ChannelStats { id, mean_float: mf, mean_quant_dequant: mq, count: calib.len() });
    }
    Ok(LayerStats { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16, 1.0] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn rejects_empty_and_inconsistent_sets() {
        assert!(matches!(CalibrationSet::new(vec![], None), Err(Error::EmptyCalibration)));
        let a = TensorBuffer::from_f32(vec![1, 2], vec![0.0; 2]).unwrap();
        let b = TensorBuffer::from_f32(vec![2, 1], vec![0.0; 2]).unwrap();
        assert!(matches!(
            CalibrationSet::new(vec![a.clone(), b], None),
            Err(Error::ShapeInconsistency { index: 1, .. })
        ));
        assert!(CalibrationSet::new(vec![a.clone()], Some(vec![0, 1])).is_err());
        assert!(CalibrationSet::new(vec![a], Some(vec![3])).is_ok());
    }
}
