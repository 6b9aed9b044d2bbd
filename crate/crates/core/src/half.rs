//! IEEE 754 binary16 conversion used to model the 16-bit inference datapath.

/// Largest finite binary16 value.
pub const F16_MAX: f32 = 65504.0;

/// Converts to the nearest binary16 bit pattern, ties to even.
///
/// Overflow saturates to a signed infinity, subnormal results are kept and any
/// NaN comes back as a quiet NaN with the sign preserved.
pub fn f32_to_f16(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        if man == 0 {
            return sign | 0x7c00;
        }
        return sign | 0x7e00 | (man >> 13) as u16;
    }

    let half_exp = exp - 127 + 15;
    if half_exp >= 0x1f {
        return sign | 0x7c00;
    }

    if half_exp <= 0 {
        // Subnormal (or zero) result. f32 subnormals are far below the
        // binary16 range and fall through the shift check below.
        let shift = (14 - half_exp) as u32;
        if shift > 24 {
            return sign;
        }
        let full = man | 0x0080_0000;
        let kept = full >> shift;
        let rem = full & ((1u32 << shift) - 1);
        let halfway = 1u32 << (shift - 1);
        let round_up = rem > halfway || (rem == halfway && kept & 1 == 1);
        // A carry out of the subnormal range lands on the smallest normal,
        // which is exactly the right bit pattern.
        return sign | (kept + round_up as u32) as u16;
    }

    let kept = ((half_exp as u32) << 10) | (man >> 13);
    let rem = man & 0x1fff;
    let round_up = rem > 0x1000 || (rem == 0x1000 && kept & 1 == 1);
    // Carry may roll the mantissa into the exponent, up to infinity.
    sign | (kept + round_up as u32) as u16
}

/// Exact widening of a binary16 bit pattern.
pub fn f16_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;

    let bits = match (exp, man) {
        (0, 0) => sign,
        (0, _) => {
            // Normalise the subnormal.
            let lead = 31 - man.leading_zeros(); // position of top set bit, 0..=9
            let e = 127 - 15 - (10 - lead) + 1;
            let m = (man << (23 - lead)) & 0x007f_ffff;
            sign | (e << 23) | m
        }
        (0x1f, 0) => sign | 0x7f80_0000,
        (0x1f, _) => sign | 0x7fc0_0000 | (man << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
    };
    f32::from_bits(bits)
}

/// Rounds a value to the nearest binary16 value, returned widened to `f32`.
#[inline]
pub fn round_f16(x: f32) -> f32 {
    f16_to_f32(f32_to_f16(x))
}

/// True when `x` survives a binary16 round trip unchanged (NaN counts).
pub fn is_f16_exact(x: f32) -> bool {
    let r = round_f16(x);
    r.to_bits() == x.to_bits() || (x.is_nan() && r.is_nan())
}
