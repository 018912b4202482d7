//! Processing-element emulation.
//!
//! The MixPE units multiply a UINT4 weight by a wider activation without a
//! multiplier: each set weight bit `i` selects the activation scaled by
//! `2^i`, and the selected terms are summed by a small adder tree.
//!
//! ```text
//! w * x = sum_{i=0..3} bit_i(w) * (x << i)        (INT8 activations)
//! w * x = sum_{i=0..3} bit_i(w) * (x (*) 2^i)     (binary16 activations)
//! ```
//!
//! `(*)` is power-of-two scaling of a binary16 value, done by adjusting the
//! exponent field. Nothing in the MixPE paths below uses `*`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Half;

/// A 4-bit unsigned weight code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct U4(u8);

impl U4 {
    pub const MAX: U4 = U4(15);

    pub fn new(v: u8) -> Option<Self> {
        (v <= 15).then_some(U4(v))
    }

    /// Keep the low four bits.
    pub const fn from_low_bits(v: u8) -> Self {
        U4(v & 0x0F)
    }

    pub const fn get(self) -> u8 {
        self.0
    }

    #[inline]
    pub const fn bit(self, i: u32) -> bool {
        (self.0 >> i) & 1 == 1
    }

    /// All sixteen codes in ascending order.
    pub fn all() -> impl Iterator<Item = U4> {
        (0..16u8).map(U4)
    }
}

impl TryFrom<i32> for U4 {
    type Error = Error;
    fn try_from(v: i32) -> Result<Self> {
        u8::try_from(v)
            .ok()
            .and_then(U4::new)
            .ok_or_else(|| Error::OperandFormat {
                kind: "UINT4".into(),
                detail: format!("code {v} outside [0, 15]"),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeKind {
    /// Shift&add UINT4 x INT8.
    MixPeA8,
    /// Shift&add UINT4 x binary16 via exponent scaling.
    MixPeA16,
    Int8Mul,
    Fp16Mul,
    /// Cost-model baseline; computes through the INT8 path.
    BitFusionLike,
    /// Cost-model baseline; computes through the INT8 path.
    OlAccelLike,
}

impl PeKind {
    pub const ALL: [PeKind; 6] = [
        PeKind::MixPeA8,
        PeKind::MixPeA16,
        PeKind::Int8Mul,
        PeKind::Fp16Mul,
        PeKind::BitFusionLike,
        PeKind::OlAccelLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PeKind::MixPeA8 => "mix-pe-a8",
            PeKind::MixPeA16 => "mix-pe-a16",
            PeKind::Int8Mul => "int8-mul",
            PeKind::Fp16Mul => "fp16-mul",
            PeKind::BitFusionLike => "bit-fusion-like",
            PeKind::OlAccelLike => "ol-accel-like",
        }
    }

    pub fn is_mixpe(self) -> bool {
        matches!(self, PeKind::MixPeA8 | PeKind::MixPeA16)
    }

    /// Activation operand format the PE consumes.
    pub fn activation_format(self) -> ActivationFormat {
        match self {
            PeKind::MixPeA16 | PeKind::Fp16Mul => ActivationFormat::Fp16,
            _ => ActivationFormat::Int8,
        }
    }
}

impl fmt::Display for PeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', '-'], "");
        Ok(match norm.as_str() {
            "mixpea8" | "a8" => PeKind::MixPeA8,
            "mixpea16" | "a16" => PeKind::MixPeA16,
            "int8mul" | "int8" => PeKind::Int8Mul,
            "fp16mul" | "fp16" => PeKind::Fp16Mul,
            "bitfusionlike" | "bitfusion" => PeKind::BitFusionLike,
            "olaccellike" | "olaccel" => PeKind::OlAccelLike,
            _ => return Err(Error::Config(format!("unknown PE kind {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationFormat {
    Int8,
    Fp16,
}

impl ActivationFormat {
    pub fn bits(self) -> u32 {
        match self {
            ActivationFormat::Int8 => 8,
            ActivationFormat::Fp16 => 16,
        }
    }
}

/// Record of the shift&add work done for one product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShiftAddTrace<T> {
    /// `(bit index, shifted addend)` for every selected term.
    pub partial_terms: Vec<(u32, T)>,
    /// Selected terms with a non-zero shift.
    pub shift_count: u32,
    /// Adder-tree additions.
    pub add_count: u32,
}

impl<T> ShiftAddTrace<T> {
    fn push(&mut self, i: u32, term: T) {
        if i > 0 {
            self.shift_count += 1;
        }
        if !self.partial_terms.is_empty() {
            self.add_count += 1;
        }
        self.partial_terms.push((i, term));
    }
}

/// UINT4 x INT8 by shift&add. The result lies in `[-1920, 1905]`.
#[inline]
pub fn mixpe_a8(w: U4, x: i8) -> i16 {
    let x = i16::from(x);
    let mut acc = 0i16;
    for i in 0..4 {
        if w.bit(i) {
            acc += x << i;
        }
    }
    acc
}

pub fn mixpe_a8_traced(w: U4, x: i8) -> (i16, ShiftAddTrace<i16>) {
    let x16 = i16::from(x);
    let mut trace = ShiftAddTrace::default();
    let mut acc = 0i16;
    for i in 0..4 {
        if w.bit(i) {
            let term = x16 << i;
            acc += term;
            trace.push(i, term);
        }
    }
    (acc, trace)
}

/// `x * 2^i` for binary16, by exponent-field arithmetic alone.
///
/// Normal values add `i` to the exponent field; subnormal values shift the
/// fraction left, which carries into the exponent field once the implicit
/// bit is reached. Power-of-two scaling never rounds. Exponent overflow
/// saturates to signed infinity; infinities and NaNs pass through.
pub fn mixpe_a16_scale(x: Half, i: u32) -> Half {
    const EXP_UNIT: u16 = 0x0400;
    const INF_MAG: u16 = 0x7C00;
    if !x.is_finite() {
        return x;
    }
    let sign = x.to_bits() & 0x8000;
    let mut mag = x.to_bits() & 0x7FFF;
    for _ in 0..i {
        if mag == 0 {
            break;
        }
        if mag < EXP_UNIT {
            // The pattern of a subnormal is its value in units of 2^-24, and
            // that stays true as it crosses into the first normal binade.
            mag <<= 1;
        } else {
            mag += EXP_UNIT;
        }
        if mag >= INF_MAG {
            return Half::from_bits(sign | INF_MAG);
        }
    }
    Half::from_bits(sign | mag)
}

/// UINT4 x binary16 by exponent scaling, accumulated in `f64`.
pub fn mixpe_a16(w: U4, x: Half) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        if w.bit(i) {
            acc += mixpe_a16_scale(x, i).to_f64();
        }
    }
    acc
}

pub fn mixpe_a16_traced(w: U4, x: Half) -> (f64, ShiftAddTrace<Half>) {
    let mut trace = ShiftAddTrace::default();
    let mut acc = 0.0;
    for i in 0..4 {
        if w.bit(i) {
            let term = mixpe_a16_scale(x, i);
            acc += term.to_f64();
            trace.push(i, term);
        }
    }
    (acc, trace)
}

/// An operand presented to a PE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Uint4(U4),
    Int8(i8),
    Fp16(Half),
}

/// A PE result in the kind's native precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Product {
    Int(i64),
    Real(f64),
}

impl Product {
    pub fn to_f64(self) -> f64 {
        match self {
            Product::Int(v) => v as f64,
            Product::Real(v) => v,
        }
    }
}

/// Compute `w * x` the way `kind` would.
///
/// Multiplier PEs widen a UINT4 weight before multiplying. The INT8 product
/// is exact; the binary16 product is rounded to binary16 and widened.
pub fn reference_pe(kind: PeKind, w: Operand, x: Operand) -> Result<Product> {
    let mismatch = |detail: &str| Error::OperandFormat {
        kind: kind.to_string(),
        detail: format!("{detail}, got ({w:?}, {x:?})"),
    };
    match kind {
        PeKind::MixPeA8 => match (w, x) {
            (Operand::Uint4(w), Operand::Int8(x)) => Ok(Product::Int(mixpe_a8(w, x).into())),
            _ => Err(mismatch("expects (UINT4, INT8)")),
        },
        PeKind::MixPeA16 => match (w, x) {
            (Operand::Uint4(w), Operand::Fp16(x)) => Ok(Product::Real(mixpe_a16(w, x))),
            _ => Err(mismatch("expects (UINT4, FP16)")),
        },
        PeKind::Int8Mul | PeKind::BitFusionLike | PeKind::OlAccelLike => {
            let w = match w {
                Operand::Uint4(w) => i64::from(w.get()),
                Operand::Int8(w) => i64::from(w),
                Operand::Fp16(_) => return Err(mismatch("expects an integer weight")),
            };
            match x {
                Operand::Int8(x) => Ok(Product::Int(w * i64::from(x))),
                _ => Err(mismatch("expects an INT8 activation")),
            }
        }
        PeKind::Fp16Mul => {
            let w = match w {
                Operand::Uint4(w) => f64::from(w.get()),
                Operand::Fp16(w) => w.to_f64(),
                Operand::Int8(_) => return Err(mismatch("expects a UINT4 or FP16 weight")),
            };
            match x {
                // The f64 product of two binary16 values is exact, so a single
                // rounding to binary16 gives the correctly rounded result.
                Operand::Fp16(x) => Ok(Product::Real(Half::from_f64(w * x.to_f64()).to_f64())),
                _ => Err(mismatch("expects an FP16 activation")),
            }
        }
    }
}

/// First disagreement found by an exhaustive check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub w: u8,
    /// Activation as a decimal integer (A8) or a binary16 pattern (A16).
    pub x: String,
    pub shift: Option<u32>,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub checked: u64,
    pub passed: u64,
    pub first_failure: Option<Counterexample>,
}

impl CheckOutcome {
    pub fn ok(&self) -> bool {
        self.passed == self.checked
    }
}

/// Compare `pe` against an integer multiply for all 16 x 256 operand pairs.
pub fn check_w4a8_exhaustive(pe: impl Fn(U4, i8) -> i16) -> CheckOutcome {
    let mut out = CheckOutcome {
        checked: 0,
        passed: 0,
        first_failure: None,
    };
    for w in U4::all() {
        for x in i8::MIN..=i8::MAX {
            out.checked += 1;
            let expected = i32::from(w.get()) * i32::from(x);
            let actual = i32::from(pe(w, x));
            if actual == expected {
                out.passed += 1;
            } else if out.first_failure.is_none() {
                out.first_failure = Some(Counterexample {
                    w: w.get(),
                    x: x.to_string(),
                    shift: None,
                    expected: expected.to_string(),
                    actual: actual.to_string(),
                });
            }
        }
    }
    out
}

/// Compare `scale` against `f64` multiply-then-round for every binary16
/// pattern and shift in `0..4`. NaNs match when both sides are NaN.
pub fn check_fp16_scaling_exhaustive(scale: impl Fn(Half, u32) -> Half) -> CheckOutcome {
    let mut out = CheckOutcome {
        checked: 0,
        passed: 0,
        first_failure: None,
    };
    for bits in 0..=u16::MAX {
        let x = Half::from_bits(bits);
        for i in 0..4u32 {
            out.checked += 1;
            let expected = Half::from_f64(x.to_f64() * f64::from(1u32 << i));
            let actual = scale(x, i);
            let same = if expected.is_nan() {
                actual.is_nan()
            } else {
                actual == expected
            };
            if same {
                out.passed += 1;
            } else if out.first_failure.is_none() {
                out.first_failure = Some(Counterexample {
                    w: 0,
                    x: format!("{bits:#06x}"),
                    shift: Some(i),
                    expected: format!("{:#06x}", expected.to_bits()),
                    actual: format!("{:#06x}", actual.to_bits()),
                });
            }
        }
    }
    out
}
