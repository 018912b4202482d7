//! Group-quantized GEMM: dequantize-before (baseline) and
//! dequantize-after-per-group-GEMM.
//!
//! For one output element with weight groups `G`,
//!
//! ```text
//! before: sum_i x_i * (s_{G(i)} * (Q_i - z_{G(i)}))
//! after:  sum_G (s_G * sum_{j in G} Q_j x_j  -  s_G z_G * sum_{j in G} x_j)
//! ```
//!
//! The two are the same sum re-associated. The "after" form dequantizes once
//! per group instead of once per element, and the inner `Q_j x_j` products
//! run on the shift&add PEs. `sum_{j in G} x_j` depends only on the
//! activation row, so it is computed once and reused by every weight row.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pe::{mixpe_a16, mixpe_a8, PeKind, U4};
use crate::quant::{
    groups_per_row, quantize, Granularity, GroupPadding, Mapping, QuantScheme, QuantizedTensor,
    Signedness,
};
use crate::tensor::{HalfMatrix, Tensor};

/// An `m x n x k` GEMM with weight group size `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmProblem {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub g: usize,
    #[serde(default)]
    pub padding: GroupPadding,
}

impl GemmProblem {
    pub fn new(m: usize, n: usize, k: usize, g: usize) -> Result<Self> {
        Self::new_padded(m, n, k, g, GroupPadding::Strict)
    }

    pub fn new_padded(m: usize, n: usize, k: usize, g: usize, padding: GroupPadding) -> Result<Self> {
        let p = GemmProblem { m, n, k, g, padding };
        p.validate()?;
        Ok(p)
    }

    pub fn with_padding(mut self, padding: GroupPadding) -> Result<Self> {
        self.padding = padding;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 || self.g == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive: m={} n={} k={} g={}",
                self.m, self.n, self.k, self.g
            )));
        }
        groups_per_row(self.k, self.g, self.padding).map(|_| ())
    }

    /// Groups per weight row.
    pub fn groups(&self) -> usize {
        self.k.div_ceil(self.g)
    }

    pub fn macs(&self) -> u64 {
        (self.m * self.n * self.k) as u64
    }

    fn group_bounds(&self, group: usize) -> (usize, usize) {
        let start = group * self.g;
        (start, (start + self.g).min(self.k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[serde(alias = "dequant-before")]
    Before,
    #[serde(alias = "dequant-after")]
    After,
}

impl Pipeline {
    /// The pipeline a PE kind runs: MixPE dequantizes after the group GEMM,
    /// multiplier PEs dequantize weights in the main loop.
    pub fn for_pe(kind: PeKind) -> Pipeline {
        if kind.is_mixpe() {
            Pipeline::After
        } else {
            Pipeline::Before
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Before => "before",
            Pipeline::After => "after",
        })
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before" | "dequant-before" => Ok(Pipeline::Before),
            "after" | "dequant-after" => Ok(Pipeline::After),
            _ => Err(Error::Config(format!("unknown pipeline {s:?}"))),
        }
    }
}

/// Work counted while running a pipeline. Counts are totals over all
/// `m * n` dot products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    /// Per-element weight scale multiplies.
    pub dequant_mults: u64,
    /// Per-element weight zero-point subtractions.
    pub dequant_subs: u64,
    /// Weight x activation products.
    pub pe_ops: u64,
    /// Per-group scale applications to a group partial sum.
    pub group_dequants: u64,
    /// Additions spent forming per-(row, group) activation sums.
    pub token_sum_adds: u64,
    /// `s z * sum(x)` corrections subtracted from group partial sums.
    pub zero_point_corrections: u64,
}

impl OpCounters {
    /// Counters a pipeline produces for `problem`, without running it.
    pub fn analytic(problem: &GemmProblem, pipeline: Pipeline) -> OpCounters {
        let (m, n, k) = (problem.m as u64, problem.n as u64, problem.k as u64);
        let groups = problem.groups() as u64;
        match pipeline {
            Pipeline::Before => OpCounters {
                dequant_mults: m * n * k,
                dequant_subs: m * n * k,
                pe_ops: m * n * k,
                ..OpCounters::default()
            },
            Pipeline::After => OpCounters {
                pe_ops: m * n * k,
                group_dequants: m * n * groups,
                token_sum_adds: m * k,
                zero_point_corrections: m * n * groups,
                ..OpCounters::default()
            },
        }
    }

    /// Dequantization operations of either kind.
    pub fn dequant_ops(&self) -> u64 {
        self.dequant_mults + self.group_dequants
    }
}

impl std::ops::AddAssign for OpCounters {
    fn add_assign(&mut self, o: OpCounters) {
        self.dequant_mults += o.dequant_mults;
        self.dequant_subs += o.dequant_subs;
        self.pe_ops += o.pe_ops;
        self.group_dequants += o.group_dequants;
        self.token_sum_adds += o.token_sum_adds;
        self.zero_point_corrections += o.zero_point_corrections;
    }
}

impl std::ops::Add for OpCounters {
    type Output = OpCounters;
    fn add(mut self, o: OpCounters) -> OpCounters {
        self += o;
        self
    }
}

/// Activation operand of a GEMM.
#[derive(Debug, Clone, Copy)]
pub enum Activations<'a> {
    Real(&'a Tensor),
    /// INT8 codes with per-row (or per-tensor) scales.
    Int8(&'a QuantizedTensor),
    Fp16(&'a HalfMatrix),
}

impl Activations<'_> {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Activations::Real(t) => t.shape(),
            Activations::Int8(q) => (q.rows(), q.cols()),
            Activations::Fp16(h) => (h.rows(), h.cols()),
        }
    }

    /// Real value of every element of row `r`.
    pub fn real_row(&self, r: usize) -> Vec<f64> {
        match self {
            Activations::Real(t) => t.row(r).to_vec(),
            Activations::Int8(q) => q
                .row_codes(r)
                .iter()
                .enumerate()
                .map(|(c, &v)| q.params_at(r, c).dequantize_value(v))
                .collect(),
            Activations::Fp16(h) => h.row(r).iter().map(|v| v.to_f64()).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let (rows, cols) = self.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(self.real_row(r));
        }
        Tensor::new(rows, cols, data).expect("shape is consistent")
    }
}

/// Per-token symmetric INT8 activation codes.
pub fn quantize_activations_int8(x: &Tensor) -> Result<QuantizedTensor> {
    quantize(x, &QuantScheme::int8_per_token())
}

fn check_shapes(x: &Activations<'_>, w: &QuantizedTensor, problem: &GemmProblem) -> Result<()> {
    problem.validate()?;
    let (xr, xc) = x.shape();
    if (xr, xc) != (problem.m, problem.k) {
        return Err(Error::Shape(format!(
            "activations are {xr}x{xc}, problem expects {}x{}",
            problem.m, problem.k
        )));
    }
    if (w.rows(), w.cols()) != (problem.n, problem.k) {
        return Err(Error::Shape(format!(
            "weights are {}x{}, problem expects {}x{}",
            w.rows(),
            w.cols(),
            problem.n,
            problem.k
        )));
    }
    if w.granularity() != Granularity::PerGroup(problem.g) {
        return Err(Error::Granularity {
            expected: Granularity::PerGroup(problem.g).to_string(),
            found: w.granularity().to_string(),
        });
    }
    Ok(())
}

/// Dequantize every weight element inside the main loop, then multiply in
/// `f64`.
pub fn gemm_dequant_before(
    x: Activations<'_>,
    w: &QuantizedTensor,
    problem: &GemmProblem,
) -> Result<(Tensor, OpCounters)> {
    check_shapes(&x, w, problem)?;
    let (n, k) = (problem.n, problem.k);
    let rows: Vec<(Vec<f64>, OpCounters)> = (0..problem.m)
        .into_par_iter()
        .map(|r| {
            let xr = x.real_row(r);
            let mut counters = OpCounters::default();
            let out = (0..n)
                .map(|c| {
                    let codes = w.row_codes(c);
                    let mut acc = 0.0;
                    for i in 0..k {
                        let p = w.params_at(c, i);
                        let centered = codes[i] - p.zero_point;
                        let weight = f64::from(centered) * p.scale;
                        acc += xr[i] * weight;
                    }
                    counters.dequant_subs += k as u64;
                    counters.dequant_mults += k as u64;
                    counters.pe_ops += k as u64;
                    acc
                })
                .collect();
            (out, counters)
        })
        .collect();
    Ok(assemble(problem, rows))
}

/// Run the per-group GEMM on MixPE units and dequantize each group partial
/// sum once.
///
/// `MixPeA8` takes INT8 activations with zero zero-point; the activation
/// scale is folded into each group scale as `s_x * s_G`. `MixPeA16` takes
/// binary16 activations. Weights must be UINT4.
pub fn gemm_dequant_after(
    x: Activations<'_>,
    w: &QuantizedTensor,
    problem: &GemmProblem,
    pe: PeKind,
) -> Result<(Tensor, OpCounters)> {
    check_shapes(&x, w, problem)?;
    if !pe.is_mixpe() {
        return Err(Error::NoFunctionalModel(pe.to_string()));
    }
    let ws = w.scheme();
    if ws.bits != 4 || ws.signedness != Signedness::Unsigned {
        return Err(Error::Scheme(format!(
            "{pe} needs UINT4 weights, got {ws}"
        )));
    }
    let weights = WeightGroups::prepare(w, problem)?;
    let rows = match (pe, x) {
        (PeKind::MixPeA8, Activations::Int8(xq)) => {
            check_int8_activations(xq)?;
            (0..problem.m)
                .into_par_iter()
                .map(|r| row_after_a8(xq, &weights, problem, r))
                .collect()
        }
        (PeKind::MixPeA16, Activations::Fp16(xh)) => (0..problem.m)
            .into_par_iter()
            .map(|r| row_after_a16(xh, &weights, problem, r))
            .collect(),
        _ => {
            return Err(Error::OperandFormat {
                kind: pe.to_string(),
                detail: "activation format does not match the PE".into(),
            })
        }
    };
    Ok(assemble(problem, rows))
}

fn check_int8_activations(xq: &QuantizedTensor) -> Result<()> {
    let s = xq.scheme();
    let per_row = matches!(s.granularity, Granularity::PerRow | Granularity::PerTensor);
    if s.bits != 8 || s.signedness != Signedness::Signed || !per_row {
        return Err(Error::Scheme(format!(
            "W4A8 activations must be per-row or per-tensor INT8, got {s}"
        )));
    }
    if s.mapping != Mapping::Symmetric && xq.params().iter().any(|p| p.zero_point != 0) {
        return Err(Error::Scheme(
            "W4A8 activations must have a zero zero-point".into(),
        ));
    }
    Ok(())
}

/// UINT4 codes plus `s` and the precomputed `s * z` of every group.
struct WeightGroups {
    codes: Vec<U4>,
    scale: Vec<f64>,
    scaled_zero: Vec<f64>,
    groups: usize,
}

impl WeightGroups {
    fn prepare(w: &QuantizedTensor, problem: &GemmProblem) -> Result<Self> {
        let codes = w
            .values()
            .iter()
            .map(|&v| U4::try_from(v))
            .collect::<Result<Vec<_>>>()?;
        let groups = problem.groups();
        let mut scale = Vec::with_capacity(problem.n * groups);
        let mut scaled_zero = Vec::with_capacity(problem.n * groups);
        for c in 0..problem.n {
            for g in 0..groups {
                let p = w.group_params(c, g);
                scale.push(p.scale);
                scaled_zero.push(p.scale * f64::from(p.zero_point));
            }
        }
        Ok(WeightGroups {
            codes,
            scale,
            scaled_zero,
            groups,
        })
    }
}

/// Exact integer dot product of one group on the W4A8 MixPE.
pub fn w4a8_group_dot(w: &[U4], x: &[i8]) -> i32 {
    w.iter()
        .zip(x)
        .fold(0i32, |acc, (&w, &x)| acc + i32::from(mixpe_a8(w, x)))
}

fn row_after_a8(
    xq: &QuantizedTensor,
    weights: &WeightGroups,
    problem: &GemmProblem,
    r: usize,
) -> (Vec<f64>, OpCounters) {
    let codes: Vec<i8> = xq.row_codes(r).iter().map(|&v| v as i8).collect();
    let x_scale = xq.params_at(r, 0).scale;
    let mut counters = OpCounters::default();

    let sums: Vec<i32> = (0..weights.groups)
        .map(|g| {
            let (a, b) = problem.group_bounds(g);
            codes[a..b].iter().map(|&v| i32::from(v)).sum()
        })
        .collect();
    counters.token_sum_adds += problem.k as u64;

    let out = (0..problem.n)
        .map(|c| {
            let wrow = &weights.codes[c * problem.k..(c + 1) * problem.k];
            let mut acc = 0.0;
            for (g, &sum) in sums.iter().enumerate() {
                let (a, b) = problem.group_bounds(g);
                let dot = w4a8_group_dot(&wrow[a..b], &codes[a..b]);
                let idx = c * weights.groups + g;
                let folded_scale = x_scale * weights.scale[idx];
                let folded_offset = x_scale * weights.scaled_zero[idx];
                acc += folded_scale * f64::from(dot) - folded_offset * f64::from(sum);
            }
            counters.pe_ops += problem.k as u64;
            counters.group_dequants += weights.groups as u64;
            counters.zero_point_corrections += weights.groups as u64;
            acc
        })
        .collect();
    (out, counters)
}

fn row_after_a16(
    xh: &HalfMatrix,
    weights: &WeightGroups,
    problem: &GemmProblem,
    r: usize,
) -> (Vec<f64>, OpCounters) {
    let xr = xh.row(r);
    let mut counters = OpCounters::default();

    let sums: Vec<f64> = (0..weights.groups)
        .map(|g| {
            let (a, b) = problem.group_bounds(g);
            xr[a..b].iter().map(|v| v.to_f64()).sum()
        })
        .collect();
    counters.token_sum_adds += problem.k as u64;

    let out = (0..problem.n)
        .map(|c| {
            let wrow = &weights.codes[c * problem.k..(c + 1) * problem.k];
            let mut acc = 0.0;
            for (g, &sum) in sums.iter().enumerate() {
                let (a, b) = problem.group_bounds(g);
                let mut dot = 0.0;
                for (&w, &x) in wrow[a..b].iter().zip(&xr[a..b]) {
                    dot += mixpe_a16(w, x);
                }
                let idx = c * weights.groups + g;
                acc += weights.scale[idx] * dot - weights.scaled_zero[idx] * sum;
            }
            counters.pe_ops += problem.k as u64;
            counters.group_dequants += weights.groups as u64;
            counters.zero_point_corrections += weights.groups as u64;
            acc
        })
        .collect();
    (out, counters)
}

fn assemble(problem: &GemmProblem, rows: Vec<(Vec<f64>, OpCounters)>) -> (Tensor, OpCounters) {
    let mut data = Vec::with_capacity(problem.m * problem.n);
    let mut counters = OpCounters::default();
    for (row, c) in rows {
        data.extend(row);
        counters += c;
    }
    let out = Tensor::new(problem.m, problem.n, data).expect("row lengths are n");
    (out, counters)
}

/// `sums[r][G] = sum of x[r][j] for j in G`.
pub fn precompute_token_group_sums(x: &Tensor, problem: &GemmProblem) -> Result<Tensor> {
    problem.validate()?;
    if x.shape() != (problem.m, problem.k) {
        return Err(Error::Shape(format!(
            "activations are {}x{}, problem expects {}x{}",
            x.rows(),
            x.cols(),
            problem.m,
            problem.k
        )));
    }
    let groups = problem.groups();
    Ok(Tensor::from_fn(problem.m, groups, |r, g| {
        let (a, b) = problem.group_bounds(g);
        x.row(r)[a..b].iter().sum()
    }))
}

/// Group dequantizations per baseline element dequantization, `1/g` when
/// `g` divides `k`.
pub fn dequant_op_ratio(problem: &GemmProblem) -> Ratio<u64> {
    let before = OpCounters::analytic(problem, Pipeline::Before);
    let after = OpCounters::analytic(problem, Pipeline::After);
    Ratio::new(after.group_dequants, before.dequant_mults)
}

/// `max|a - b| / max|b|`, or the absolute difference when `b` is all zero.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    let diff = a.max_abs_diff(b)?;
    let scale = b.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(if scale == 0.0 { diff } else { diff / scale })
}
