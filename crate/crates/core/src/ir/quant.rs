use serde::{Deserialize, Serialize};

use super::tensor::{TensorBuffer, TensorData};
use crate::error::{Error, Result};
use crate::float_bits::is_exact_pow2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Asymmetric,
    Symmetric,
    /// Symmetric with `range_max` an exact power of two.
    SymmetricPow2Range,
}

impl Scheme {
    pub fn is_symmetric(self) -> bool {
        self != Scheme::Asymmetric
    }
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub min: i32,
    pub max: i32,
}

impl IntRange {
    pub const I32: IntRange = IntRange { min: i32::MIN, max: i32::MAX };

    pub fn clamp(self, v: i64) -> i32 {
        v.clamp(self.min as i64, self.max as i64) as i32
    }

    pub fn contains(self, v: i32) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

/// Per-tensor affine quantization parameters: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u32,
    pub signed: bool,
    pub scheme: Scheme,
    pub range_min: f64,
    pub range_max: f64,
}

/// Round half away from zero, the toolkit-wide rounding rule.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

impl QuantParams {
    /// Representable integer range. Symmetric grids leave the most negative code unused.
    pub fn int_range(&self) -> IntRange {
        let b = self.bits.min(32);
        let half = 1i64 << (b - 1);
        let (min, max) = match (self.scheme, self.signed) {
            (Scheme::Asymmetric, false) => (0, (1i64 << b) - 1),
            (Scheme::Asymmetric, true) => (-half, half - 1),
            (_, _) => (-(half - 1), half - 1),
        };
        IntRange { min: min.max(i32::MIN as i64) as i32, max: max.min(i32::MAX as i64) as i32 }
    }

    pub fn quantize_value(&self, x: f64) -> i32 {
        let r = self.int_range();
        let q = round_half_away(x / self.scale) + self.zero_point as f64;
        if q.is_nan() {
            return self.zero_point;
        }
        q.clamp(r.min as f64, r.max as f64) as i32
    }

    pub fn dequantize_value(&self, q: i32) -> f64 {
        self.scale * (q as i64 - self.zero_point as i64) as f64
    }
}

/// Builds quantization parameters for a real range.
///
/// Asymmetric grids span `[range_min, range_max]` over `2^bits - 1` steps with the
/// zero point nudged to the nearest integer. Symmetric grids are signed with
/// `scale = range_max / 127` and a zero point of 0.
pub fn derive_quant_params(
    range_min: f64,
    range_max: f64,
    bits: u32,
    signed: bool,
    scheme: Scheme,
) -> Result<QuantParams> {
    if bits != 8 {
        return Err(Error::UnsupportedBits(bits));
    }
    let bad = |reason| Err(Error::InvalidRange { min: range_min, max: range_max, reason });
    if !(range_min.is_finite() && range_max.is_finite()) {
        return bad("range is not finite");
    }
    if range_min >= range_max {
        return bad("min must be below max");
    }
    if range_min > 0.0 || range_max < 0.0 {
        return bad("zero is not representable");
    }
    if scheme.is_symmetric() && !signed {
        return Err(Error::InvalidScheme { scheme, signed });
    }
    let qmax_sym = ((1i64 << (bits - 1)) - 1) as f64;
    let qp = match scheme {
        Scheme::Asymmetric => {
            let steps = ((1u64 << bits) - 1) as f64;
            let scale = (range_max - range_min) / steps;
            let mut qp = QuantParams {
                scale,
                zero_point: 0,
                bits,
                signed,
                scheme,
                range_min,
                range_max,
            };
            let r = qp.int_range();
            let z = round_half_away(r.min as f64 - range_min / scale);
            qp.zero_point = z.clamp(r.min as f64, r.max as f64) as i32;
            qp
        }
        Scheme::Symmetric | Scheme::SymmetricPow2Range => {
            if range_min != -range_max {
                return bad("symmetric range must satisfy min = -max");
            }
            if scheme == Scheme::SymmetricPow2Range && !is_exact_pow2(range_max) {
                return bad("range_max is not a power of two");
            }
            QuantParams {
                scale: range_max / qmax_sym,
                zero_point: 0,
                bits,
                signed,
                scheme,
                range_min,
                range_max,
            }
        }
    };
    if !(qp.scale.is_finite() && qp.scale > 0.0) {
        return bad("scale underflows");
    }
    Ok(qp)
}

/// Symmetric signed 8-bit parameters around an existing scale (range = ±127·scale).
pub fn symmetric_from_scale(scale: f64) -> QuantParams {
    let range_max = 127.0 * scale;
    QuantParams {
        scale,
        zero_point: 0,
        bits: 8,
        signed: true,
        scheme: Scheme::Symmetric,
        range_min: -range_max,
        range_max,
    }
}

/// Elementwise `clamp(round(t / scale) + zero_point)` into the grid of `qp`.
pub fn quantize_tensor(t: &TensorBuffer, qp: &QuantParams) -> Result<TensorBuffer> {
    let src = t
        .as_f32()
        .ok_or_else(|| Error::ShapeMismatch(format!("quantize expects f32, got {:?}", t.dtype())))?;
    let q = src.iter().map(|&x| qp.quantize_value(x as f64));
    let data = if qp.signed {
        TensorData::I8(q.map(|v| v as i8).collect())
    } else {
        TensorData::U8(q.map(|v| v as u8).collect())
    };
    TensorBuffer::new(t.shape().to_vec(), data)
}

/// Elementwise `scale * (q - zero_point)`.
pub fn dequantize_tensor(q: &TensorBuffer, qp: &QuantParams) -> Result<TensorBuffer> {
    let ints = q
        .to_i32_vec()
        .ok_or_else(|| Error::ShapeMismatch("dequantize expects an integer tensor".into()))?;
    let data = ints.into_iter().map(|v| qp.dequantize_value(v) as f32).collect();
    TensorBuffer::from_f32(q.shape().to_vec(), data)
}

/// Bias quantized at `bias_scale = S_w * S_i` into a saturated 32-bit grid.
pub fn quantize_bias(bias: &TensorBuffer, bias_scale: f64) -> Result<TensorBuffer> {
    let src = bias
        .as_f32()
        .ok_or_else(|| Error::ShapeMismatch("bias must be f32".into()))?;
    let data = src.iter().map(|&b| quantize_bias_value(b as f64, bias_scale)).collect();
    TensorBuffer::from_i32(bias.shape().to_vec(), data)
}

pub fn quantize_bias_value(b: f64, bias_scale: f64) -> i32 {
    let q = round_half_away(b / bias_scale);
    if q.is_nan() {
        0
    } else {
        q.clamp(i32::MIN as f64, i32::MAX as f64) as i32
    }
}
