//! Scheme transforms: symmetric ranges, power-of-two ranges, the naive
//! baseline, and shift-only multiplier rounding.

use super::common::{correct_weights, rederive_bias, record_params, solve_weight_scale};
use super::report::PassRecord;
use super::TargetScheme;
use crate::error::{Error, Result};
use crate::float_bits::{exp2i, is_exact_pow2};
use crate::interp::compute_multiplier;
use crate::ir::{derive_quant_params, symmetric_from_scale, ModelGraph, QuantParams, Scheme};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ints {
    /// Forward weights and bias re-derived from float under the new params.
    Rederive,
    /// Integer tensors kept verbatim.
    Keep,
}

fn retarget(
    graph: &ModelGraph,
    pass: &str,
    f: impl Fn(&str, &QuantParams) -> Result<QuantParams>,
    ints: Ints,
) -> Result<(ModelGraph, Vec<PassRecord>)> {
    let mut g = graph.clone();
    let mut records = Vec::new();
    let new_in = f(&g.input_id, &g.input_qp)?;
    if new_in != g.input_qp {
        let mut rec = PassRecord::new(pass, &g.input_id);
        record_params(&mut rec, "input", &g.input_qp, &new_in);
        records.push(rec);
        g.input_qp = new_in;
    }
    for layer in &mut g.layers {
        let mut rec = PassRecord::new(pass, &layer.id);
        let new_i = f(&layer.id, &layer.input_qp)?;
        let new_o = f(&layer.id, &layer.output_qp)?;
        record_params(&mut rec, "input", &layer.input_qp, &new_i);
        record_params(&mut rec, "output", &layer.output_qp, &new_o);
        layer.input_qp = new_i;
        layer.output_qp = new_o;
        if let Some(old_w) = layer.weight_qp {
            let new_w = f(&layer.id, &old_w)?;
            record_params(&mut rec, "weight", &old_w, &new_w);
            layer.weight_qp = Some(new_w);
            if ints == Ints::Rederive {
                correct_weights(layer)?;
                rederive_bias(layer)?;
            }
        }
        if !rec.changes.is_empty() {
            records.push(rec);
        }
    }
    Ok((g, records))
}

fn max_abs(qp: &QuantParams) -> f64 {
    qp.range_min.abs().max(qp.range_max.abs())
}

pub(crate) fn symmetric_qp(qp: &QuantParams) -> Result<QuantParams> {
    if qp.scheme.is_symmetric() && qp.zero_point == 0 && qp.signed {
        return Ok(*qp);
    }
    let m = max_abs(qp);
    derive_quant_params(-m, m, qp.bits, true, Scheme::Symmetric)
}

/// `2^round(log2 m)`.
pub fn snap_pow2(m: f64) -> f64 {
    exp2i(m.log2().round() as i32)
}

pub(crate) fn pow2_qp(id: &str, qp: &QuantParams) -> Result<QuantParams> {
    if qp.scheme == Scheme::SymmetricPow2Range && qp.zero_point == 0 {
        return Ok(*qp);
    }
    let m = max_abs(qp);
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::NonPositiveRange(id.to_string()));
    }
    let r = snap_pow2(m);
    derive_quant_params(-r, r, qp.bits, true, Scheme::SymmetricPow2Range)
}

/// Every tensor range becomes `[-m', m']` with `m' = max(|min|, |max|)`.
pub fn symmetrize_ranges(graph: &ModelGraph) -> Result<(ModelGraph, Vec<PassRecord>)> {
    retarget(graph, "symmetrize", |_, qp| symmetric_qp(qp), Ints::Rederive)
}

/// Like [`symmetrize_ranges`] with `m'` snapped to `2^round(log2 m')`.
pub fn pow2_ranges(graph: &ModelGraph) -> Result<(ModelGraph, Vec<PassRecord>)> {
    retarget(graph, "pow2_ranges", pow2_qp, Ints::Rederive)
}

/// Uncompensated baseline: zero points dropped, scales kept (or snapped to the
/// nearest power of two), integer tensors reinterpreted as-is.
pub fn naive_requant(graph: &ModelGraph, target: TargetScheme) -> Result<(ModelGraph, Vec<PassRecord>)> {
    let f = |_: &str, qp: &QuantParams| -> Result<QuantParams> {
        let pow2 = target == TargetScheme::SymmetricPow2;
        if qp.scheme.is_symmetric() && qp.zero_point == 0 && (!pow2 || is_exact_pow2(qp.scale)) {
            return Ok(*qp);
        }
        let scale = if pow2 { snap_pow2(qp.scale) } else { qp.scale };
        Ok(symmetric_from_scale(scale))
    };
    retarget(graph, "naive", f, Ints::Keep)
}

/// Replaces each weighted layer's multiplier `M = P * 2^-Q` by `2^-Q`, i.e.
/// drops the fractional part `P`, by adjusting only the weight scale; integer
/// weights and bias are left alone. This is what a shift-only runtime executes
/// when `P` has not been folded into the weights.
pub fn snap_multipliers(graph: &ModelGraph) -> Result<(ModelGraph, Vec<PassRecord>)> {
    let mut g = graph.clone();
    let mut records = Vec::new();
    for layer in &mut g.layers {
        let Some(wqp) = layer.weight_qp else { continue };
        let (s_i, s_o) = (layer.input_qp.scale, layer.output_qp.scale);
        let m = compute_multiplier(wqp.scale, s_i, s_o)?;
        if m.is_pow2 {
            continue;
        }
        let q = m.shift;
        let start = wqp.scale * exp2i(-q) / m.value;
        let s_w = solve_weight_scale(start, s_i, s_o, q)?;
        let new_w = symmetric_from_scale(s_w);
        let mut rec = PassRecord::new("snap_multipliers", &layer.id);
        rec.change("M", m.value, exp2i(-q));
        rec.change("Q", m.shift, q);
        record_params(&mut rec, "weight", &wqp, &new_w);
        layer.weight_qp = Some(new_w);
        records.push(rec);
    }
    Ok((g, records))
}
