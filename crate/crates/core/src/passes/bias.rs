use super::common::rederive_bias;
use super::report::PassRecord;
use crate::calibration::{channel_means, CalibrationSet};
use crate::error::{Error, Result};
use crate::interp::ExecPath;
use crate::ir::{ModelGraph, TensorBuffer};

/// Adds the per-channel mean output error `E[T_o] - E[S_o (q_o - Z_o)]` to each
/// biased layer, in topological order so later layers see earlier corrections.
/// Float expectations come from `reference` (the unmodified float weights).
pub fn bias_correction(
    graph: &ModelGraph,
    reference: &ModelGraph,
    calib: &CalibrationSet,
) -> Result<(ModelGraph, Vec<PassRecord>)> {
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let float_means = channel_means(reference, calib, ExecPath::Float)?;
    let mut g = graph.clone();
    let mut records = Vec::new();
    for idx in 0..g.layers.len() {
        if g.layers[idx].bias_float.is_none() || g.layers[idx].weight_qp.is_none() {
            continue;
        }
        let id = g.layers[idx].id.clone();
        let target = float_means
            .iter()
            .find(|(fid, _)| *fid == id)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::TopologyMismatch(format!("layer {id} missing from reference")))?;
        let quant_means = channel_means(&g, calib, ExecPath::Quant)?;
        let current = &quant_means[idx].1;
        let eps: Vec<f64> = target.iter().zip(current).map(|(f, q)| f - q).collect();

        let layer = &mut g.layers[idx];
        let bf = layer.bias_float.as_ref().unwrap();
        let corrected: Vec<f32> = bf
            .as_f32()
            .ok_or_else(|| Error::ShapeMismatch(format!("{id}: bias_float must be f32")))?
            .iter()
            .zip(&eps)
            .map(|(&b, &e)| (b as f64 + e) as f32)
            .collect();
        let mut rec = PassRecord::new("bc", &id);
        for (c, e) in eps.iter().enumerate() {
            rec.change(format!("epsilon[{c}]"), 0, e);
        }
        let original = bf.clone();
        layer.bias_float = Some(TensorBuffer::from_f32(bf.shape().to_vec(), corrected.clone())?);
        rederive_bias(layer)?;

        // A channel whose outputs sit inside one output step can jump a whole
        // code; keep the shift only where it does not grow the measured error.
        let after = channel_means(&g, calib, ExecPath::Quant)?;
        let worse: Vec<usize> = (0..eps.len())
            .filter(|&c| (target[c] - after[idx].1[c]).abs() > eps[c].abs())
            .collect();
        if !worse.is_empty() {
            let layer = &mut g.layers[idx];
            let old = original.as_f32().unwrap();
            let mut kept = corrected;
            for &c in &worse {
                kept[c] = old[c];
            }
            layer.bias_float = Some(TensorBuffer::from_f32(original.shape().to_vec(), kept)?);
            rederive_bias(layer)?;
            rec.change("reverted", 0, worse.len());
        }
        records.push(rec);
    }
    Ok((g, records))
}
