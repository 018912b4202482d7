//! IEEE 754 binary16 emulation and the rounding primitive used by the
//! quantizers.
//!
//! [`Half`] is a plain 16-bit pattern in the 1-5-10 layout. Conversion to
//! `f64` is exact; conversion from `f64` rounds to nearest, ties to even,
//! with overflow to signed infinity. All arithmetic in this crate happens in
//! `f64`; binary16 is only ever a storage and PE-input format.

use std::fmt;

use crate::error::{Error, Result};

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;
const EXP_BIAS: i32 = 15;
const MAN_BITS: u32 = 10;

/// A binary16 bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Canonical quiet NaN.
    pub const NAN: Half = Half(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Smallest positive normal value, 2^-14.
    pub const MIN_POSITIVE: Half = Half(0x0400);
    /// Smallest positive subnormal value, 2^-24.
    pub const MIN_POSITIVE_SUBNORMAL: Half = Half(0x0001);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Assembles a pattern from its fields. Out-of-range fields are masked.
    pub const fn from_fields(sign: bool, exponent: u16, mantissa: u16) -> Self {
        let s = if sign { SIGN_MASK } else { 0 };
        Half(s | ((exponent << MAN_BITS) & EXP_MASK) | (mantissa & MAN_MASK))
    }

    #[inline]
    pub const fn sign(self) -> bool {
        self.0 & SIGN_MASK != 0
    }

    /// The raw 5-bit biased exponent field.
    #[inline]
    pub const fn exponent_field(self) -> u16 {
        (self.0 & EXP_MASK) >> MAN_BITS
    }

    /// The raw 10-bit fraction field.
    #[inline]
    pub const fn mantissa_field(self) -> u16 {
        self.0 & MAN_MASK
    }

    pub const fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK != 0
    }

    pub const fn is_infinite(self) -> bool {
        self.0 & !SIGN_MASK == EXP_MASK
    }

    pub const fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    pub const fn is_zero(self) -> bool {
        self.0 & !SIGN_MASK == 0
    }

    pub const fn is_subnormal(self) -> bool {
        self.0 & EXP_MASK == 0 && self.0 & MAN_MASK != 0
    }

    /// Nearest binary16 to `v` under round-to-nearest-even.
    ///
    /// Magnitudes at or above 65520 become infinity; NaN becomes a quiet NaN
    /// carrying the input's sign.
    pub fn from_f64(v: f64) -> Self {
        let bits = v.to_bits();
        let sign = ((bits >> 48) as u16) & SIGN_MASK;
        let exp = ((bits >> 52) & 0x7FF) as i32;
        let man = bits & ((1u64 << 52) - 1);

        if exp == 0x7FF {
            return if man != 0 {
                Half(sign | Half::NAN.0)
            } else {
                Half(sign | EXP_MASK)
            };
        }
        // f64 zeros and subnormals sit far below half of the smallest
        // binary16 subnormal.
        if exp == 0 {
            return Half(sign);
        }

        let unbiased = exp - 1023;
        let significand = man | (1u64 << 52);
        if unbiased > EXP_BIAS {
            return Half(sign | EXP_MASK);
        }

        let magnitude = if unbiased >= 1 - EXP_BIAS {
            // Normal range: keep 11 significant bits. A rounding carry out of
            // the significand rolls into the exponent field, and from the
            // largest finite exponent into the infinity pattern.
            let q = round_shift_ties_even(significand, 52 - MAN_BITS);
            (((unbiased + EXP_BIAS - 1) as u64) << MAN_BITS) + q
        } else {
            // Subnormal range: count units of 2^-24.
            let shift = (28 - unbiased) as u32;
            round_shift_ties_even(significand, shift)
        };

        if magnitude >= EXP_MASK as u64 {
            Half(sign | EXP_MASK)
        } else {
            Half(sign | magnitude as u16)
        }
    }

    /// Exact value of the pattern.
    pub fn to_f64(self) -> f64 {
        let exp = self.exponent_field() as i32;
        let man = self.mantissa_field() as f64;
        let magnitude = match exp {
            0 => man * 2f64.powi(1 - EXP_BIAS - MAN_BITS as i32),
            31 if self.mantissa_field() == 0 => f64::INFINITY,
            31 => f64::NAN,
            _ => (man + 1024.0) * 2f64.powi(exp - EXP_BIAS - MAN_BITS as i32),
        };
        if self.sign() {
            -magnitude
        } else {
            magnitude
        }
    }
}

impl From<Half> for f64 {
    fn from(h: Half) -> f64 {
        h.to_f64()
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({:#06x} = {})", self.0, self.to_f64())
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

/// `v >> shift`, rounded to nearest with ties to even.
fn round_shift_ties_even(v: u64, shift: u32) -> u64 {
    if shift == 0 {
        return v;
    }
    if shift >= 64 {
        return 0;
    }
    let q = v >> shift;
    let rem = v & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Rounding rule applied by the quantizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    #[default]
    NearestEven,
}

impl RoundingMode {
    pub fn round(self, x: f64) -> Result<i64> {
        match self {
            RoundingMode::NearestEven => round_ties_even(x),
        }
    }
}

/// Nearest integer to `x`, ties to even.
pub fn round_ties_even(x: f64) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::NonFinite { value: x });
    }
    let r = x.round_ties_even();
    // 2^63 is exactly representable; anything at or above it overflows.
    if !(-9_223_372_036_854_775_808.0..9_223_372_036_854_775_808.0).contains(&r) {
        return Err(Error::IntegerOverflow { value: x });
    }
    Ok(r as i64)
}
