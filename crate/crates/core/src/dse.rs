//! Quantization SNR and the SNR-versus-hardware-cost design sweep.
//!
//! `SNR = 10 log10( sum x^2 / sum (x_hat - x)^2 )` in decibels. A design
//! point's SNR is measured on the GEMM output `X W^T`, with both operands
//! passed through the point's number formats, so it depends only on the
//! quantization scheme and never on which PE computes the products.
//! Hardware cost is whole-array area times whole-array power, normalized to
//! a 4x4 array of INT8 multiplier PEs.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::CostTable;
use crate::error::{Error, Result};
use crate::mpgemm::quantize_activations_int8;
use crate::pe::{ActivationFormat, PeKind};
use crate::quant::{quantize, Granularity, Mapping, QuantScheme, Signedness};
use crate::tensor::Tensor;

/// Signal-to-noise power ratio, not in decibels. Infinite when the
/// reconstruction is exact.
pub fn snr_ratio(original: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    original
        .check_same_shape(reconstructed)
        .map_err(|e| Error::SnrUndefined(e.to_string()))?;
    let signal: f64 = original.as_slice().iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::SnrUndefined("original signal is all zero".into()));
    }
    let noise: f64 = original
        .as_slice()
        .iter()
        .zip(reconstructed.as_slice())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        signal / noise
    })
}

/// SNR in decibels; `+inf` for exact reconstruction.
pub fn snr(original: &Tensor, reconstructed: &Tensor) -> Result<f64> {
    Ok(10.0 * snr_ratio(original, reconstructed)?.log10())
}

/// Quantize, dequantize and measure.
pub fn snr_for_scheme(data: &Tensor, scheme: &QuantScheme) -> Result<f64> {
    let q = quantize(data, scheme)?;
    snr(data, &q.dequantize())
}

/// One candidate accelerator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignPoint {
    pub pe_kind: PeKind,
    pub weight: QuantScheme,
    pub activation: ActivationFormat,
    pub rows: usize,
    pub cols: usize,
}

impl DesignPoint {
    pub fn new(pe_kind: PeKind, weight: QuantScheme, rows: usize, cols: usize) -> Self {
        DesignPoint {
            pe_kind,
            weight,
            activation: pe_kind.activation_format(),
            rows,
            cols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("array dimensions must be at least 1".into()));
        }
        if self.activation != self.pe_kind.activation_format() {
            return Err(Error::Config(format!(
                "{} consumes {:?} activations, design asks for {:?}",
                self.pe_kind,
                self.pe_kind.activation_format(),
                self.activation
            )));
        }
        if self.pe_kind.is_mixpe()
            && (self.weight.bits != 4
                || self.weight.signedness != Signedness::Unsigned
                || self.weight.mapping != Mapping::Asymmetric)
        {
            return Err(Error::Config(format!(
                "{} requires asymmetric UINT4 weights, got {}",
                self.pe_kind, self.weight
            )));
        }
        Ok(())
    }

    /// `(R*C*area) * (R*C*power)`, with a 4x4 INT8 array at 1.
    pub fn hw_cost(&self, table: &CostTable) -> Result<f64> {
        let c = table.get(self.pe_kind)?;
        let pes = (self.rows * self.cols) as f64;
        Ok((pes * c.area) * (pes * c.power) / 256.0)
    }

    /// Weight-and-activation SNR of the GEMM output on `data`.
    pub fn snr(&self, data: &SweepData) -> Result<f64> {
        let w_hat = quantize(&data.weights, &self.weight)?.dequantize();
        let x_hat = match self.activation {
            ActivationFormat::Int8 => quantize_activations_int8(&data.activations)?.dequantize(),
            ActivationFormat::Fp16 => data.activations.to_half().to_tensor(),
        };
        let reference = matmul_transposed(&data.activations, &data.weights)?;
        let approx = matmul_transposed(&x_hat, &w_hat)?;
        snr(&reference, &approx)
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let act = match self.activation {
            ActivationFormat::Int8 => "int8",
            ActivationFormat::Fp16 => "fp16",
        };
        write!(
            f,
            "{} w={} a={} {}x{}",
            self.pe_kind, self.weight, act, self.rows, self.cols
        )
    }
}

/// `x (m x k)` times `w (n x k)` transposed, in `f64`.
pub fn matmul_transposed(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if x.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "reduction lengths differ: {} vs {}",
            x.cols(),
            w.cols()
        )));
    }
    Ok(Tensor::from_fn(x.rows(), w.rows(), |r, c| {
        x.row(r).iter().zip(w.row(c)).map(|(a, b)| a * b).sum()
    }))
}

/// Operands the sweep measures SNR on.
#[derive(Debug, Clone)]
pub struct SweepData {
    /// `n x k`.
    pub weights: Tensor,
    /// `m x k`.
    pub activations: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub index: usize,
    pub descriptor: String,
    #[serde(with = "inf_as_string")]
    pub snr_db: f64,
    pub hw_cost: f64,
    pub dominated: bool,
    pub design: DesignPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub index: usize,
    pub descriptor: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// Evaluated points in design-point order.
    pub points: Vec<ParetoPoint>,
    pub failures: Vec<PointFailure>,
}

impl SweepOutcome {
    pub fn frontier(&self) -> impl Iterator<Item = &ParetoPoint> {
        self.points.iter().filter(|p| !p.dominated)
    }
}

/// Evaluate every point and flag the dominated ones. Points that fail are
/// recorded and skipped.
pub fn sweep(points: &[DesignPoint], data: &SweepData, table: &CostTable) -> Result<SweepOutcome> {
    if points.is_empty() {
        return Err(Error::Config("design sweep needs at least one point".into()));
    }
    let evaluated: Vec<std::result::Result<ParetoPoint, PointFailure>> = points
        .par_iter()
        .enumerate()
        .map(|(index, design)| {
            let descriptor = design.to_string();
            let eval = || -> Result<(f64, f64)> {
                design.validate()?;
                Ok((design.snr(data)?, design.hw_cost(table)?))
            };
            match eval() {
                Ok((snr_db, hw_cost)) => Ok(ParetoPoint {
                    index,
                    descriptor,
                    snr_db,
                    hw_cost,
                    dominated: false,
                    design: *design,
                }),
                Err(e) => Err(PointFailure {
                    index,
                    descriptor,
                    error: e.to_string(),
                }),
            }
        })
        .collect();

    let mut out = SweepOutcome {
        points: Vec::new(),
        failures: Vec::new(),
    };
    for e in evaluated {
        match e {
            Ok(p) => out.points.push(p),
            Err(f) => out.failures.push(f),
        }
    }
    let objectives: Vec<(f64, f64)> = out.points.iter().map(|p| (p.snr_db, p.hw_cost)).collect();
    for (p, dominated) in out.points.iter_mut().zip(dominated_flags(&objectives)) {
        p.dominated = dominated;
    }
    Ok(out)
}

/// For `(snr, cost)` pairs, whether each is dominated: some other point has
/// SNR at least as high and cost at most as high, with one strict. Points
/// tied on both axes do not dominate each other.
pub fn dominated_flags(points: &[(f64, f64)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1));
    let mut flags = vec![false; points.len()];
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let cost = points[order[start]].1;
        let mut end = start;
        while end < order.len() && points[order[end]].1 == cost {
            end += 1;
        }
        let group = &order[start..end];
        let best_here = group
            .iter()
            .map(|&i| points[i].0)
            .fold(f64::NEG_INFINITY, f64::max);
        for &i in group {
            let snr = points[i].0;
            flags[i] = best_cheaper >= snr || best_here > snr;
        }
        best_cheaper = best_cheaper.max(best_here);
        start = end;
    }
    flags
}

/// The default design space: every PE kind with each compatible weight
/// scheme, on 4x4 and 8x8 arrays.
pub fn default_design_space() -> Vec<DesignPoint> {
    let granularities = [
        Granularity::PerTensor,
        Granularity::PerRow,
        Granularity::PerGroup(128),
        Granularity::PerGroup(64),
        Granularity::PerGroup(32),
    ];
    let mut points = Vec::new();
    for (rows, cols) in [(4, 4), (8, 8)] {
        for kind in PeKind::ALL {
            for g in granularities {
                points.push(DesignPoint::new(
                    kind,
                    QuantScheme::new(4, Signedness::Unsigned, g),
                    rows,
                    cols,
                ));
                if !kind.is_mixpe() {
                    points.push(DesignPoint::new(
                        kind,
                        QuantScheme::new(8, Signedness::Signed, g),
                        rows,
                        cols,
                    ));
                }
            }
        }
    }
    points
}

/// Serializes infinite values as the strings `"inf"` / `"-inf"`.
pub mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
            },
        }
    }
}

/// Text form of an SNR value, `inf` for exact reconstruction.
pub fn format_snr(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}
