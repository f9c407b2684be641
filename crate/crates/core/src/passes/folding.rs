use super::common::{correct_weights, rederive_bias, record_params, solve_weight_scale};
use super::report::PassRecord;
use crate::error::{Error, Result};
use crate::interp::{compute_multiplier, decompose_pow2};
use crate::ir::{symmetric_from_scale, ModelGraph, QuantParams};

fn require_symmetric(id: &str, role: &str, qp: &QuantParams) -> Result<()> {
    if qp.scheme.is_symmetric() && qp.zero_point == 0 {
        Ok(())
    } else {
        Err(Error::SchemePrecondition(format!(
            "{id}: {role} params are {:?} with zero point {}; round-error folding needs a symmetric graph",
            qp.scheme, qp.zero_point
        )))
    }
}

/// Folds the round error `P` of each multiplier `M = P * 2^-Q` into the weight
/// scale (`S_w <- S_w / P`) and re-quantizes the weights, leaving a runtime
/// multiplier of exactly `2^-Q`.
pub fn round_error_folding(graph: &ModelGraph) -> Result<(ModelGraph, Vec<PassRecord>)> {
    require_symmetric(&graph.input_id, "input", &graph.input_qp)?;
    for l in &graph.layers {
        require_symmetric(&l.id, "input", &l.input_qp)?;
        require_symmetric(&l.id, "output", &l.output_qp)?;
        if let Some(w) = &l.weight_qp {
            require_symmetric(&l.id, "weight", w)?;
        }
    }
    let mut g = graph.clone();
    let mut records = Vec::new();
    for layer in &mut g.layers {
        let Some(wqp) = layer.weight_qp else { continue };
        let (s_i, s_o) = (layer.input_qp.scale, layer.output_qp.scale);
        let m = compute_multiplier(wqp.scale, s_i, s_o)?;
        if m.is_pow2 {
            continue;
        }
        let (p, q) = decompose_pow2(m.value)?;
        let s_w = solve_weight_scale(wqp.scale / p, s_i, s_o, q)?;
        let new_w = symmetric_from_scale(s_w);
        let folded = compute_multiplier(s_w, s_i, s_o)?;
        debug_assert!(folded.is_pow2 && folded.shift == q);

        let mut rec = PassRecord::new("ref", &layer.id);
        rec.change("M", m.value, folded.value);
        rec.change("P", "-", p);
        rec.change("Q", "-", q);
        record_params(&mut rec, "weight", &wqp, &new_w);
        layer.weight_qp = Some(new_w);
        correct_weights(layer)?;
        rederive_bias(layer)?;
        records.push(rec);
    }
    Ok((g, records))
}
