use super::common::{rederive_bias, record_params, regrid};
use super::report::PassRecord;
use super::scheme::snap_pow2;
use super::TargetScheme;
use crate::error::{Error, Result};
use crate::interp::decompose_pow2;
use crate::ir::{derive_quant_params, symmetric_from_scale, ModelGraph, QuantParams, Scheme, TensorBuffer};

/// Default explicit clipping threshold.
pub const DEFAULT_CLIP: f64 = 6.0;

/// Number of candidate thresholds searched in [`ClipThreshold::Auto`] mode.
pub const AUTO_GRID: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipThreshold {
    Fixed(f64),
    /// Per-tensor threshold minimizing weight quantization MSE over a grid.
    Auto,
}

impl Default for ClipThreshold {
    fn default() -> Self {
        ClipThreshold::Fixed(DEFAULT_CLIP)
    }
}

impl std::str::FromStr for ClipThreshold {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ClipThreshold::Auto);
        }
        match s.parse::<f64>() {
            Ok(c) if c.is_finite() && c > 0.0 => Ok(ClipThreshold::Fixed(c)),
            _ => Err(format!("clip threshold must be a positive number or 'auto', got {s:?}")),
        }
    }
}

/// Range used when a clipped tensor is identically zero (2^-7).
const MIN_RANGE: f64 = 1.0 / 128.0;

/// Symmetric weight params covering `[-m, m]` under the target scheme.
pub(crate) fn weight_params(m: f64, target: TargetScheme) -> Result<QuantParams> {
    let m = if m > 0.0 { m } else { MIN_RANGE };
    match target {
        TargetScheme::Symmetric => derive_quant_params(-m, m, 8, true, Scheme::Symmetric),
        TargetScheme::SymmetricPow2 => {
            let r = snap_pow2(m);
            derive_quant_params(-r, r, 8, true, Scheme::SymmetricPow2Range)
        }
    }
}

/// Grid the weights finally run on for a candidate range: the target grid, or
/// with `fold = Some((S_i, S_o))` the grid round-error folding moves it to.
fn final_params(c: f64, target: TargetScheme, fold: Option<(f64, f64)>) -> Result<QuantParams> {
    let qp = weight_params(c, target)?;
    match fold {
        None => Ok(qp),
        Some((s_i, s_o)) => {
            let (p, _) = decompose_pow2(qp.scale * s_i / s_o)?;
            Ok(symmetric_from_scale(qp.scale / p))
        }
    }
}

fn quant_mse(w: &[f32], c: f64, target: TargetScheme, fold: Option<(f64, f64)>) -> Result<f64> {
    let qp = final_params(c, target, fold)?;
    Ok(w.iter()
        .map(|&x| {
            let x = x as f64;
            let y = qp.dequantize_value(qp.quantize_value(x.clamp(-c, c)));
            (x - y) * (x - y)
        })
        .sum())
}

/// Grid search over `AUTO_GRID` thresholds evenly spaced in `(max/2, max]`.
pub fn auto_threshold(w: &[f32], target: TargetScheme) -> Result<f64> {
    search_threshold(w, target, None)
}

fn search_threshold(w: &[f32], target: TargetScheme, fold: Option<(f64, f64)>) -> Result<f64> {
    let max = w.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
    if max == 0.0 {
        return Ok(MIN_RANGE);
    }
    let mut best = (f64::INFINITY, max);
    for k in 1..=AUTO_GRID {
        let c = max * (0.5 + 0.5 * k as f64 / AUTO_GRID as f64);
        let err = quant_mse(w, c, target, fold)?;
        if err < best.0 {
            best = (err, c);
        }
    }
    Ok(best.1)
}

/// Clips backward weights to `[-c, c]` and tightens the weight range to the
/// clipped extent. Forward weights are only re-expressed on the new grid;
/// recomputing them from the clipped floats is weight correction's job.
pub fn weight_clip(
    graph: &ModelGraph,
    threshold: ClipThreshold,
    target: TargetScheme,
) -> Result<(ModelGraph, Vec<PassRecord>)> {
    clip_weights(graph, threshold, target, false)
}

/// With `folding`, the automatic threshold is scored on the grid that
/// round-error folding will produce rather than the pre-folding grid.
pub(crate) fn clip_weights(
    graph: &ModelGraph,
    threshold: ClipThreshold,
    target: TargetScheme,
    folding: bool,
) -> Result<(ModelGraph, Vec<PassRecord>)> {
    if let ClipThreshold::Fixed(c) = threshold {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidConfig(format!("clip threshold must be positive, got {c}")));
        }
    }
    let mut g = graph.clone();
    let mut records = Vec::new();
    for layer in &mut g.layers {
        let (Some(wf), Some(old_qp)) = (&layer.weights_float, layer.weight_qp) else { continue };
        let w = wf.as_f32().ok_or_else(|| Error::ShapeMismatch(format!("{}: float weights", layer.id)))?;
        let c = match threshold {
            ClipThreshold::Fixed(c) => c,
            ClipThreshold::Auto => {
                let fold = folding.then_some((layer.input_qp.scale, layer.output_qp.scale));
                search_threshold(w, target, fold)?
            }
        };
        let mut clipped_count = 0usize;
        let clipped: Vec<f32> = w
            .iter()
            .map(|&x| {
                let y = (x as f64).clamp(-c, c) as f32;
                if y != x {
                    clipped_count += 1;
                }
                y
            })
            .collect();
        let extent = clipped.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()));
        let new_qp = weight_params(extent, target)?;
        if clipped_count == 0 && new_qp == old_qp {
            continue;
        }
        let mut rec = PassRecord::new("wcl", &layer.id);
        rec.change("threshold", "-", c);
        rec.change("clipped", 0, clipped_count);
        record_params(&mut rec, "weight", &old_qp, &new_qp);
        layer.weights_float = Some(TensorBuffer::from_f32(wf.shape().to_vec(), clipped)?);
        if let Some(wq) = &layer.weights_quant {
            layer.weights_quant = Some(regrid(wq, &old_qp, &new_qp)?);
        }
        layer.weight_qp = Some(new_qp);
        rederive_bias(layer)?;
        records.push(rec);
    }
    Ok((g, records))
}
