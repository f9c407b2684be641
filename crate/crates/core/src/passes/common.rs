use super::report::PassRecord;
use crate::error::{Error, Result};
use crate::interp::compute_multiplier;
use crate::ir::{quantize_bias, quantize_tensor, LayerNode, QuantParams, TensorBuffer, TensorData};

/// Forward weights re-expressed on a new grid: dequantized under `old`, quantized under `new`.
pub(crate) fn regrid(wq: &TensorBuffer, old: &QuantParams, new: &QuantParams) -> Result<TensorBuffer> {
    let ints = wq
        .to_i32_vec()
        .ok_or_else(|| Error::ShapeMismatch("forward weights must be integer".into()))?;
    let q = ints.into_iter().map(|v| new.quantize_value(old.dequantize_value(v)));
    let data = if new.signed {
        TensorData::I8(q.map(|v| v as i8).collect())
    } else {
        TensorData::U8(q.map(|v| v as u8).collect())
    };
    TensorBuffer::new(wq.shape().to_vec(), data)
}

/// Recomputes forward weights from backward weights under the current weight params.
pub(crate) fn correct_weights(layer: &mut LayerNode) -> Result<bool> {
    let (Some(wf), Some(qp)) = (&layer.weights_float, &layer.weight_qp) else {
        return Ok(false);
    };
    let fresh = quantize_tensor(wf, qp)?;
    let changed = layer.weights_quant.as_ref() != Some(&fresh);
    layer.weights_quant = Some(fresh);
    Ok(changed)
}

/// Re-derives `bias_quant` from `bias_float` at scale `S_w * S_i`.
pub(crate) fn rederive_bias(layer: &mut LayerNode) -> Result<()> {
    if let (Some(bf), Some(bias_scale)) = (&layer.bias_float, layer.bias_scale()) {
        layer.bias_quant = Some(quantize_bias(bf, bias_scale)?);
    }
    Ok(())
}

pub(crate) fn record_params(rec: &mut PassRecord, role: &str, old: &QuantParams, new: &QuantParams) {
    if old.scale != new.scale {
        rec.change(format!("{role}.scale"), old.scale, new.scale);
    }
    if old.zero_point != new.zero_point {
        rec.change(format!("{role}.zero_point"), old.zero_point, new.zero_point);
    }
    if old.range_max != new.range_max || old.range_min != new.range_min {
        rec.change(
            format!("{role}.range"),
            format!("[{},{}]", old.range_min, old.range_max),
            format!("[{},{}]", new.range_min, new.range_max),
        );
    }
}

/// Finds a weight scale near `start` for which `s_w * s_i / s_o` evaluates to
/// `2^-q`; falls back to the closest candidate (always within one ulp).
pub(crate) fn solve_weight_scale(start: f64, s_i: f64, s_o: f64, q: i32) -> Result<f64> {
    let target = crate::float_bits::exp2i(-q);
    let eval = |c: f64| c * s_i / s_o;
    let (mut up, mut down) = (start, start);
    let mut best = (f64::INFINITY, start);
    for _ in 0..64 {
        for c in [up, down] {
            let m = eval(c);
            if m == target {
                return Ok(c);
            }
            let d = (m - target).abs();
            if d < best.0 {
                best = (d, c);
            }
        }
        up = up.next_up();
        down = down.next_down();
    }
    let m = compute_multiplier(best.1, s_i, s_o)?;
    if m.is_pow2 && m.shift == q {
        Ok(best.1)
    } else {
        Err(Error::DegenerateScale(format!(
            "no weight scale near {start} yields multiplier 2^-{q} (s_i={s_i}, s_o={s_o})"
        )))
    }
}
