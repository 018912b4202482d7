//! Asymmetric and symmetric integer quantization at per-tensor, per-row and
//! per-group granularity.
//!
//! An asymmetric partition with range `[lo, hi]` gets
//!
//! ```text
//! s = (hi - lo) / (2^n - 1)
//! z = round(-2^(n-1) - lo / s)   (signed codes)
//! z = round(-lo / s)             (unsigned codes)
//! Q = clamp(round(x / s + z))
//! x_hat = (Q - z) * s
//! ```
//!
//! with `round` being ties-to-even. The range is always widened to contain
//! zero, so `z` is a valid code and zero is reconstructed exactly. A
//! partition whose widened range is empty (all zeros) uses `s = 1` and the
//! code of zero as its zero point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::round_ties_even;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signedness {
    Signed,
    Unsigned,
}

/// How `(scale, zero point)` pairs are shared across a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Granularity {
    PerTensor,
    /// Per output channel for weights, per token for activations.
    PerRow,
    /// One pair per contiguous block of `g` elements within a row.
    PerGroup(usize),
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::PerTensor => f.write_str("tensor"),
            Granularity::PerRow => f.write_str("row"),
            Granularity::PerGroup(g) => write!(f, "group:{g}"),
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor" => Ok(Granularity::PerTensor),
            "row" | "channel" | "token" => Ok(Granularity::PerRow),
            _ => {
                let g = s
                    .strip_prefix("group:")
                    .and_then(|g| g.parse::<usize>().ok())
                    .ok_or_else(|| Error::Scheme(format!("unknown granularity {s:?}")))?;
                if g == 0 {
                    return Err(Error::Scheme("group size must be positive".into()));
                }
                Ok(Granularity::PerGroup(g))
            }
        }
    }
}

impl TryFrom<String> for Granularity {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Granularity> for String {
    fn from(g: Granularity) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mapping {
    /// Min/max range with a zero point.
    #[default]
    Asymmetric,
    /// `s = max|x| / (2^(n-1) - 1)`, `z = 0`. Signed codes only.
    Symmetric,
}

/// What to do when a group size does not divide the row length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupPadding {
    #[default]
    Strict,
    /// Treat the row as padded with zeros up to a multiple of `g`. The final
    /// group is partial and its statistics include the padding.
    ZeroPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantScheme {
    pub bits: u32,
    pub signedness: Signedness,
    pub granularity: Granularity,
    #[serde(default)]
    pub mapping: Mapping,
    #[serde(default)]
    pub padding: GroupPadding,
}

impl QuantScheme {
    pub fn new(bits: u32, signedness: Signedness, granularity: Granularity) -> Self {
        QuantScheme {
            bits,
            signedness,
            granularity,
            mapping: Mapping::Asymmetric,
            padding: GroupPadding::Strict,
        }
    }

    /// UINT4 weights with one `(s, z)` pair per group of `g`.
    pub fn uint4_grouped(g: usize) -> Self {
        QuantScheme::new(4, Signedness::Unsigned, Granularity::PerGroup(g))
    }

    /// Symmetric signed INT8 with one scale per row (per token).
    pub fn int8_per_token() -> Self {
        QuantScheme {
            mapping: Mapping::Symmetric,
            ..QuantScheme::new(8, Signedness::Signed, Granularity::PerRow)
        }
    }

    pub fn with_padding(mut self, padding: GroupPadding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits != 4 && self.bits != 8 {
            return Err(Error::Scheme(format!(
                "bit width {} unsupported (expected 4 or 8)",
                self.bits
            )));
        }
        if self.mapping == Mapping::Symmetric && self.signedness == Signedness::Unsigned {
            return Err(Error::Scheme(
                "symmetric mapping requires signed codes".into(),
            ));
        }
        if self.granularity == Granularity::PerGroup(0) {
            return Err(Error::Scheme("group size must be positive".into()));
        }
        Ok(())
    }
}

impl fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.signedness {
            Signedness::Signed => "int",
            Signedness::Unsigned => "uint",
        };
        write!(f, "{s}{}/{}", self.bits, self.granularity)?;
        if self.mapping == Mapping::Symmetric {
            f.write_str("/sym")?;
        }
        Ok(())
    }
}

/// Inclusive code range for `bits`-wide integers.
pub fn code_range(bits: u32, signedness: Signedness) -> (i32, i32) {
    match signedness {
        Signedness::Unsigned => (0, (1 << bits) - 1),
        Signedness::Signed => (-(1 << (bits - 1)), (1 << (bits - 1)) - 1),
    }
}

/// Scale and zero point of one partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u32,
    pub signedness: Signedness,
}

impl QuantParams {
    /// Fit parameters to the values of one partition.
    pub fn fit(values: &[f64], scheme: &QuantScheme) -> Result<Self> {
        let (qmin, qmax) = code_range(scheme.bits, scheme.signedness);
        let (scale, zero_point) = match scheme.mapping {
            Mapping::Asymmetric => {
                let (lo, hi) = values
                    .iter()
                    .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let span = hi - lo;
                if span == 0.0 {
                    let z = match scheme.signedness {
                        Signedness::Unsigned => 0,
                        Signedness::Signed => qmin,
                    };
                    (1.0, z)
                } else {
                    let scale = span / f64::from(qmax - qmin);
                    if !scale.is_finite() || scale == 0.0 {
                        return Err(Error::Scheme(format!(
                            "range [{lo}, {hi}] gives unusable scale {scale}"
                        )));
                    }
                    let offset = match scheme.signedness {
                        Signedness::Unsigned => 0.0,
                        Signedness::Signed => f64::from(qmin),
                    };
                    let z = round_ties_even(offset - lo / scale)?;
                    (scale, z.clamp(i64::from(qmin), i64::from(qmax)) as i32)
                }
            }
            Mapping::Symmetric => {
                let amax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if amax == 0.0 {
                    (1.0, 0)
                } else {
                    let scale = amax / f64::from(qmax);
                    if !scale.is_finite() || scale == 0.0 {
                        return Err(Error::Scheme(format!(
                            "magnitude {amax} gives unusable scale {scale}"
                        )));
                    }
                    (scale, 0)
                }
            }
        };
        Ok(QuantParams {
            scale,
            zero_point,
            bits: scheme.bits,
            signedness: scheme.signedness,
        })
    }

    pub fn code_range(&self) -> (i32, i32) {
        code_range(self.bits, self.signedness)
    }

    pub fn quantize_value(&self, x: f64) -> Result<i32> {
        let (qmin, qmax) = self.code_range();
        let q = round_ties_even(x / self.scale + f64::from(self.zero_point))?;
        Ok(q.clamp(i64::from(qmin), i64::from(qmax)) as i32)
    }

    #[inline]
    pub fn dequantize_value(&self, q: i32) -> f64 {
        f64::from(q - self.zero_point) * self.scale
    }
}

/// Number of `(s, z)` pairs a `rows x k` tensor needs.
pub fn group_param_count(
    rows: usize,
    k: usize,
    granularity: Granularity,
    padding: GroupPadding,
) -> Result<usize> {
    Ok(match granularity {
        Granularity::PerTensor => 1,
        Granularity::PerRow => rows,
        Granularity::PerGroup(g) => rows * groups_per_row(k, g, padding)?,
    })
}

pub(crate) fn groups_per_row(k: usize, g: usize, padding: GroupPadding) -> Result<usize> {
    if g == 0 {
        return Err(Error::Scheme("group size must be positive".into()));
    }
    if !k.is_multiple_of(g) && padding == GroupPadding::Strict {
        return Err(Error::GroupSize { group_size: g, k });
    }
    Ok(k.div_ceil(g))
}

/// Integer codes plus the parameters of every partition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    values: Vec<i32>,
    params: Vec<QuantParams>,
    scheme: QuantScheme,
}

impl QuantizedTensor {
    /// Assemble from parts, checking every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        values: Vec<i32>,
        params: Vec<QuantParams>,
        scheme: QuantScheme,
    ) -> Result<Self> {
        scheme.validate()?;
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} codes expected, got {}",
                values.len()
            )));
        }
        let expected = group_param_count(rows, cols, scheme.granularity, scheme.padding)?;
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "{} granularity needs {expected} parameter sets, got {}",
                scheme.granularity,
                params.len()
            )));
        }
        let (qmin, qmax) = code_range(scheme.bits, scheme.signedness);
        if let Some(v) = values.iter().find(|v| **v < qmin || **v > qmax) {
            return Err(Error::Scheme(format!(
                "code {v} outside [{qmin}, {qmax}]"
            )));
        }
        for p in &params {
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return Err(Error::Scheme(format!("scale {} must be positive", p.scale)));
            }
            if p.zero_point < qmin || p.zero_point > qmax {
                return Err(Error::Scheme(format!(
                    "zero point {} outside [{qmin}, {qmax}]",
                    p.zero_point
                )));
            }
            if p.bits != scheme.bits || p.signedness != scheme.signedness {
                return Err(Error::Scheme("parameter format differs from scheme".into()));
            }
        }
        Ok(QuantizedTensor {
            rows,
            cols,
            values,
            params,
            scheme,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scheme(&self) -> &QuantScheme {
        &self.scheme
    }

    pub fn granularity(&self) -> Granularity {
        self.scheme.granularity
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn row_codes(&self, r: usize) -> &[i32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn params(&self) -> &[QuantParams] {
        &self.params
    }

    /// Parameter sets per row: 1 for per-row, `ceil(k/g)` for per-group.
    pub fn groups_per_row(&self) -> usize {
        match self.scheme.granularity {
            Granularity::PerGroup(g) => self.cols.div_ceil(g),
            _ => 1,
        }
    }

    /// Parameters governing element `(r, c)`.
    pub fn params_at(&self, r: usize, c: usize) -> &QuantParams {
        match self.scheme.granularity {
            Granularity::PerTensor => &self.params[0],
            Granularity::PerRow => &self.params[r],
            Granularity::PerGroup(g) => &self.params[r * self.groups_per_row() + c / g],
        }
    }

    /// Parameters of group `group` in row `r` (per-group tensors), or the
    /// row/tensor parameters otherwise.
    pub fn group_params(&self, r: usize, group: usize) -> &QuantParams {
        match self.scheme.granularity {
            Granularity::PerTensor => &self.params[0],
            Granularity::PerRow => &self.params[r],
            Granularity::PerGroup(_) => &self.params[r * self.groups_per_row() + group],
        }
    }

    pub fn dequantize(&self) -> Tensor {
        Tensor::from_fn(self.rows, self.cols, |r, c| {
            self.params_at(r, c)
                .dequantize_value(self.values[r * self.cols + c])
        })
    }

    /// Storage for the codes when packed at `bits` per element, rounded up
    /// to whole bytes per row.
    pub fn packed_bytes(&self) -> usize {
        self.rows * (self.cols * self.scheme.bits as usize).div_ceil(8)
    }
}

/// Quantize `x` under `scheme`.
pub fn quantize(x: &Tensor, scheme: &QuantScheme) -> Result<QuantizedTensor> {
    scheme.validate()?;
    if let Some((_, _, value)) = x.first_non_finite() {
        return Err(Error::NonFinite { value });
    }
    let (rows, cols) = x.shape();
    let mut params = Vec::with_capacity(group_param_count(
        rows,
        cols,
        scheme.granularity,
        scheme.padding,
    )?);
    match scheme.granularity {
        Granularity::PerTensor => params.push(QuantParams::fit(x.as_slice(), scheme)?),
        Granularity::PerRow => {
            for r in 0..rows {
                params.push(QuantParams::fit(x.row(r), scheme)?);
            }
        }
        Granularity::PerGroup(g) => {
            // Zero padding never changes a range that already contains zero,
            // so a partial final group is fitted on its real elements alone.
            for r in 0..rows {
                for chunk in x.row(r).chunks(g) {
                    params.push(QuantParams::fit(chunk, scheme)?);
                }
            }
        }
    }

    let mut q = QuantizedTensor {
        rows,
        cols,
        values: Vec::with_capacity(rows * cols),
        params,
        scheme: *scheme,
    };
    for r in 0..rows {
        for c in 0..cols {
            let code = q.params_at(r, c).quantize_value(x.get(r, c))?;
            q.values.push(code);
        }
    }
    Ok(q)
}

/// `(Q - z) * s` elementwise.
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    q.dequantize()
}

/// Pack 4-bit codes two per byte, low nibble first.
pub fn pack_nibbles(codes: &[u8]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|pair| (pair[0] & 0x0F) | (pair.get(1).copied().unwrap_or(0) << 4))
        .collect()
}

/// Inverse of [`pack_nibbles`].
pub fn unpack_nibbles(bytes: &[u8], len: usize) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|b| [b & 0x0F, b >> 4])
        .take(len)
        .collect()
}
