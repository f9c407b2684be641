//! Exact binary-exponent helpers for `f64`.

/// Splits a finite positive `x` into `(f, e)` with `x = f * 2^e` and `f` in `[0.5, 1)`.
pub fn frexp(x: f64) -> (f64, i32) {
    debug_assert!(x.is_finite() && x > 0.0);
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    if exp_field == 0 {
        // subnormal: scale into the normal range first
        let (f, e) = frexp(x * f64::from_bits(0x43f0_0000_0000_0000)); // 2^64
        return (f, e - 64);
    }
    let e = exp_field - 1022;
    let f = f64::from_bits((bits & !(0x7ff << 52)) | (1022u64 << 52));
    (f, e)
}

/// `2^k` as an exact `f64`, saturating to 0 or infinity outside the representable range.
pub fn exp2i(k: i32) -> f64 {
    if k > 1023 {
        f64::INFINITY
    } else if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else if k >= -1074 {
        f64::from_bits(1u64 << (k + 1074))
    } else {
        0.0
    }
}

/// Returns `Some(k)` iff `x == 2^k` exactly.
pub fn exact_log2(x: f64) -> Option<i32> {
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    let (f, e) = frexp(x);
    (f == 0.5).then_some(e - 1)
}

pub fn is_exact_pow2(x: f64) -> bool {
    exact_log2(x).is_some()
}

pub fn next_up(x: f64) -> f64 {
    x.next_up()
}

pub fn next_down(x: f64) -> f64 {
    x.next_down()
}
