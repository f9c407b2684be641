use crate::error::{Error, Result};
use crate::float_bits::{exact_log2, exp2i, frexp};
use crate::ir::IntRange;

/// Runtime rescale factor `M = P * 2^-Q`, realized either as a pure shift
/// (`is_pow2`) or as a 31-bit fixed-point mantissa:
/// `M ≈ mantissa / 2^31 * 2^-mantissa_shift` with `mantissa` in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multiplier {
    pub value: f64,
    pub mantissa: i32,
    pub mantissa_shift: i32,
    /// Right-shift count `Q`; negative means left shift.
    pub shift: i32,
    pub is_pow2: bool,
}

fn check_scale(name: &str, s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::DegenerateScale(format!("{name} = {s}")))
    }
}

/// `M = s_w * s_i / s_o`, evaluated left to right in `f64`.
pub fn compute_multiplier(s_w: f64, s_i: f64, s_o: f64) -> Result<Multiplier> {
    check_scale("s_w", s_w)?;
    check_scale("s_i", s_i)?;
    check_scale("s_o", s_o)?;
    Multiplier::from_value(s_w * s_i / s_o)
}

/// Splits `m` into `(p, q)` with `p` in `(0.5, 1]` and `m = p * 2^-q`.
pub fn decompose_pow2(m: f64) -> Result<(f64, i32)> {
    check_scale("multiplier", m)?;
    let (f, e) = frexp(m);
    if f == 0.5 {
        Ok((1.0, 1 - e))
    } else {
        Ok((f, -e))
    }
}

impl Multiplier {
    /// Values within one ulp of `2^k` are classified as the power of two itself:
    /// no `f64` weight scale can always land the product exactly, and the
    /// difference is far below the 31-bit mantissa resolution.
    pub fn from_value(m: f64) -> Result<Self> {
        check_scale("multiplier", m)?;
        let near_pow2 = [m, m.next_up(), m.next_down()].into_iter().find_map(exact_log2);
        if let Some(k) = near_pow2 {
            return Ok(Self::pow2(-k));
        }
        let (p, q) = decompose_pow2(m)?;
        let m0 = (p * (1u64 << 31) as f64).round() as i64;
        let (mantissa, mantissa_shift) = if m0 == 1 << 31 { (1 << 30, q - 1) } else { (m0 as i32, q) };
        Ok(Self { value: m, mantissa, mantissa_shift, shift: q, is_pow2: false })
    }

    /// Exactly `2^-q`.
    pub fn pow2(q: i32) -> Self {
        Self { value: exp2i(-q), mantissa: 1 << 30, mantissa_shift: q - 1, shift: q, is_pow2: true }
    }
}

/// `round_half_away(x / 2^n)` for `n >= 1`.
fn rounding_shift_i128(x: i128, n: u32) -> i128 {
    if n >= 126 {
        return 0;
    }
    let mag = (x.unsigned_abs() + (1u128 << (n - 1))) >> n;
    if x < 0 {
        -(mag as i128)
    } else {
        mag as i128
    }
}

/// Bit-shift rescale for power-of-two multipliers.
pub fn requantize_by_shift(acc: i32, q: i32, z_o: i32, out: IntRange) -> i32 {
    let acc = acc as i64;
    let scaled = if q > 0 {
        if q >= 63 {
            0
        } else {
            let half = 1i64 << (q - 1);
            let mag = (acc.abs() + half) >> q;
            if acc < 0 {
                -mag
            } else {
                mag
            }
        }
    } else {
        let n = -q;
        if acc == 0 {
            0
        } else if n <= 31 {
            acc << n
        } else if acc > 0 {
            i64::MAX / 2
        } else {
            i64::MIN / 2
        }
    };
    out.clamp(scaled + z_o as i64)
}

/// Generic rescale: one rounding of `acc * mantissa / 2^(31 + mantissa_shift)`.
pub fn requantize_fixed_point(acc: i32, mantissa: i32, mantissa_shift: i32, z_o: i32, out: IntRange) -> i32 {
    let prod = acc as i128 * mantissa as i128;
    let total = 31 + mantissa_shift;
    let scaled = if total > 0 {
        rounding_shift_i128(prod, total as u32)
    } else {
        let n = (-total) as u32;
        if prod == 0 {
            0
        } else if n < 64 {
            prod << n
        } else if prod > 0 {
            i128::MAX / 2
        } else {
            i128::MIN / 2
        }
    };
    let v = (scaled + z_o as i128).clamp(i64::MIN as i128, i64::MAX as i128) as i64;
    out.clamp(v)
}

/// Rescales a 32-bit accumulator into the output grid, adding `z_o` and saturating.
pub fn requantize_accumulator(acc: i32, m: &Multiplier, z_o: i32, out: IntRange) -> i32 {
    if m.is_pow2 {
        requantize_by_shift(acc, m.shift, z_o, out)
    } else {
        requantize_fixed_point(acc, m.mantissa, m.mantissa_shift, z_o, out)
    }
}
