use super::common::{correct_weights, rederive_bias};
use super::report::PassRecord;
use crate::error::Result;
use crate::ir::ModelGraph;

/// Recomputes forward weights from backward weights under the current weight
/// params, and bias at `S_w * S_i`.
pub fn weight_correction(graph: &ModelGraph) -> Result<(ModelGraph, Vec<PassRecord>)> {
    let mut g = graph.clone();
    let mut records = Vec::new();
    for layer in &mut g.layers {
        if layer.weight_qp.is_none() {
            continue;
        }
        let before = layer.weights_quant.clone();
        let bias_before = layer.bias_quant.clone();
        correct_weights(layer)?;
        rederive_bias(layer)?;
        if layer.weights_quant == before && layer.bias_quant == bias_before {
            continue;
        }
        let changed = match (&before, &layer.weights_quant) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.to_i32_vec().unwrap_or_default(), b.to_i32_vec().unwrap_or_default());
                a.iter().zip(&b).filter(|(x, y)| x != y).count()
            }
            _ => 0,
        };
        let mut rec = PassRecord::new("wcr", &layer.id);
        rec.change("weights_changed", 0, changed);
        if layer.bias_quant != bias_before {
            rec.change("bias_quant", "stale", "rederived");
        }
        records.push(rec);
    }
    Ok((g, records))
}
