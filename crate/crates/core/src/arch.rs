//! Output-stationary systolic-array timing and energy model.
//!
//! Timing, for an `R x C` array whose PEs retire `t` MACs per cycle:
//!
//! ```text
//! compute = ceil(m/R) * ceil(n/C) * (ceil(k/t) + R + C - 2)
//! dequant before GEMM = ceil(n*k / (R*C))            once per GEMM
//! dequant after GEMM  = ceil(m/R) * ceil(n*G / C)     G = ceil(k/g)
//! ```
//!
//! The first term is the usual output-stationary fill/compute/drain skew per
//! tile. Baseline PEs dequantize the whole weight matrix inside the main
//! loop; MixPE runs a per-group epilogue for every tile row.
//!
//! Energy is split into DRAM, on-chip buffer, core and static parts. Core
//! energy is `pe_ops * power(pe) * mac_energy`. Static energy is a fixed
//! fraction of the dynamic total.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpgemm::{GemmProblem, OpCounters, Pipeline};
use crate::pe::PeKind;

/// Bytes per group scale (binary16).
pub const SCALE_BYTES: u64 = 2;
/// Bytes per group zero point.
pub const ZERO_POINT_BYTES: u64 = 1;
/// Bytes per output element (32-bit accumulator).
pub const OUTPUT_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystolicConfig {
    pub rows: usize,
    pub cols: usize,
    pub pe_kind: PeKind,
    pub frequency_hz: f64,
    pub buffer_bytes: u64,
    pub group_size: usize,
    /// Stored weight width. All schemes in the default study use 4.
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
    /// Activation width; defaults to the PE's activation format.
    #[serde(default)]
    pub activation_bits: Option<u32>,
}

fn default_weight_bits() -> u32 {
    4
}

impl SystolicConfig {
    /// A 4x4 array at 250 MHz with a 512 KiB buffer and groups of 128.
    pub fn new(pe_kind: PeKind) -> Self {
        SystolicConfig {
            rows: 4,
            cols: 4,
            pe_kind,
            frequency_hz: 250e6,
            buffer_bytes: 512 * 1024,
            group_size: 128,
            weight_bits: 4,
            activation_bits: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("array dimensions must be at least 1".into()));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::Config("frequency must be positive".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group size must be positive".into()));
        }
        if self.weight_bits == 0 || self.activation_bits() == 0 {
            return Err(Error::Config("operand widths must be positive".into()));
        }
        Ok(())
    }

    pub fn activation_bits(&self) -> u32 {
        self.activation_bits
            .unwrap_or_else(|| self.pe_kind.activation_format().bits())
    }

    pub fn pe_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: SystolicConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Relative cost of one PE kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeCost {
    /// Area relative to the INT8 multiplier PE.
    pub area: f64,
    /// Power relative to the INT8 multiplier PE.
    pub power: f64,
    /// MACs retired per PE per cycle.
    pub macs_per_cycle: f64,
    /// Fitted to a target ordering rather than measured.
    #[serde(default)]
    pub calibrated: bool,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    /// Energy of one INT8 multiplier MAC, in model energy units.
    pub mac_energy: f64,
    pub dram_energy_per_byte: f64,
    pub buffer_energy_per_byte: f64,
    /// Static energy as a fraction of dynamic energy.
    pub static_fraction: f64,
    pub pe: BTreeMap<PeKind, PeCost>,
}

/// FP16 multiplier PE relative to INT8: a calibration constant.
const FP16_AREA: f64 = 1.9;
const FP16_POWER: f64 = 2.2;

/// Cost table with the MixPE area and power ratios and calibrated baselines.
pub fn default_cost_table() -> CostTable {
    let measured = |area: f64, power: f64, macs_per_cycle: f64, source: &str| PeCost {
        area,
        power,
        macs_per_cycle,
        calibrated: false,
        source: source.into(),
    };
    let fitted = |area: f64, power: f64, macs_per_cycle: f64, source: &str| PeCost {
        calibrated: true,
        ..measured(area, power, macs_per_cycle, source)
    };
    let mut pe = BTreeMap::new();
    pe.insert(
        PeKind::Int8Mul,
        measured(1.0, 1.0, 1.0, "reference PE; all ratios are relative to it"),
    );
    pe.insert(
        PeKind::MixPeA8,
        measured(
            0.46,
            0.79,
            2.0,
            "54% area and 21% power reduction vs INT8 PE; 2x theoretical throughput",
        ),
    );
    pe.insert(
        PeKind::Fp16Mul,
        fitted(FP16_AREA, FP16_POWER, 1.0, "FP16-vs-INT8 cross ratio, calibration constant"),
    );
    pe.insert(
        PeKind::MixPeA16,
        measured(
            0.77 * FP16_AREA,
            0.36 * FP16_POWER,
            1.0,
            "77% of FP16 PE area, 64% power reduction vs FP16 PE",
        ),
    );
    pe.insert(
        PeKind::BitFusionLike,
        fitted(1.25, 1.15, 1.05, "baseline fitted to the target speedup ordering"),
    );
    pe.insert(
        PeKind::OlAccelLike,
        fitted(1.35, 1.2, 1.10, "baseline fitted to the target speedup ordering"),
    );
    CostTable {
        mac_energy: 1.0,
        dram_energy_per_byte: 200.0,
        buffer_energy_per_byte: 2.0,
        static_fraction: 0.10,
        pe,
    }
}

impl CostTable {
    pub fn get(&self, kind: PeKind) -> Result<&PeCost> {
        self.pe
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("cost table has no entry for {kind}")))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("mac_energy", self.mac_energy)?;
        positive("dram_energy_per_byte", self.dram_energy_per_byte)?;
        positive("buffer_energy_per_byte", self.buffer_energy_per_byte)?;
        if !(self.static_fraction >= 0.0 && self.static_fraction.is_finite()) {
            return Err(Error::Config("static_fraction must be non-negative".into()));
        }
        for (kind, c) in &self.pe {
            positive(&format!("{kind}.area"), c.area)?;
            positive(&format!("{kind}.power"), c.power)?;
            positive(&format!("{kind}.macs_per_cycle"), c.macs_per_cycle)?;
        }
        Ok(())
    }

    /// Area and power ratios of `kind` against `reference`.
    pub fn ratio(&self, kind: PeKind, reference: PeKind) -> Result<(f64, f64)> {
        let a = self.get(kind)?;
        let b = self.get(reference)?;
        Ok((a.area / b.area, a.power / b.power))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let t: CostTable = toml::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        CostTable::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub compute: u64,
    pub dequant_overhead: u64,
    pub total: u64,
}

/// Cycle count of `problem` on `cfg` under `pipeline`.
pub fn cycle_model(
    problem: &GemmProblem,
    cfg: &SystolicConfig,
    pipeline: Pipeline,
    table: &CostTable,
) -> Result<CycleBreakdown> {
    problem.validate()?;
    cfg.validate()?;
    let throughput = table.get(cfg.pe_kind)?.macs_per_cycle;
    let (m, n, k) = (problem.m as u64, problem.n as u64, problem.k as u64);
    let (r, c) = (cfg.rows as u64, cfg.cols as u64);
    let tile_rows = m.div_ceil(r);
    let tile_cols = n.div_ceil(c);
    let k_steps = (k as f64 / throughput).ceil() as u64;
    let compute = tile_rows * tile_cols * (k_steps + r + c - 2);
    let dequant_overhead = match pipeline {
        Pipeline::Before => (n * k).div_ceil(r * c),
        Pipeline::After => tile_rows * (n * problem.groups() as u64).div_ceil(c),
    };
    Ok(CycleBreakdown {
        compute,
        dequant_overhead,
        total: compute + dequant_overhead,
    })
}

/// Share of cycles spent on dequantization.
pub fn dequant_overhead_fraction(
    problem: &GemmProblem,
    cfg: &SystolicConfig,
    pipeline: Pipeline,
    table: &CostTable,
) -> Result<f64> {
    let c = cycle_model(problem, cfg, pipeline, table)?;
    Ok(c.dequant_overhead as f64 / c.total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dram: f64,
    pub buffer: f64,
    pub core: f64,
    #[serde(rename = "static")]
    pub static_: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.dram + self.buffer + self.core + self.static_
    }
}

impl std::ops::AddAssign for EnergyBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.dram += o.dram;
        self.buffer += o.buffer;
        self.core += o.core;
        self.static_ += o.static_;
    }
}

/// DRAM bytes per operand class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BytesMoved {
    pub weights: u64,
    pub activations: u64,
    pub outputs: u64,
    pub group_params: u64,
}

impl BytesMoved {
    pub fn total(&self) -> u64 {
        self.weights + self.activations + self.outputs + self.group_params
    }
}

impl std::ops::AddAssign for BytesMoved {
    fn add_assign(&mut self, o: Self) {
        self.weights += o.weights;
        self.activations += o.activations;
        self.outputs += o.outputs;
        self.group_params += o.group_params;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub pe_kind: PeKind,
    pub pipeline: Pipeline,
    pub cycles: u64,
    pub compute_cycles: u64,
    pub overhead_cycles: u64,
    pub latency_seconds: f64,
    pub energy_total: f64,
    pub energy_breakdown: EnergyBreakdown,
    pub bytes_moved: BytesMoved,
    pub op_counters: OpCounters,
    pub dequant_overhead_fraction: f64,
    /// The PE cost entry is a calibration constant, not a measurement.
    pub calibrated: bool,
}

impl SimReport {
    /// Sum of several reports for the same PE and pipeline.
    pub fn aggregate(reports: &[SimReport]) -> Option<SimReport> {
        let first = reports.first()?;
        let mut total = SimReport {
            cycles: 0,
            compute_cycles: 0,
            overhead_cycles: 0,
            latency_seconds: 0.0,
            energy_total: 0.0,
            energy_breakdown: EnergyBreakdown::default(),
            bytes_moved: BytesMoved::default(),
            op_counters: OpCounters::default(),
            dequant_overhead_fraction: 0.0,
            ..first.clone()
        };
        for r in reports {
            total.cycles += r.cycles;
            total.compute_cycles += r.compute_cycles;
            total.overhead_cycles += r.overhead_cycles;
            total.latency_seconds += r.latency_seconds;
            total.energy_breakdown += r.energy_breakdown;
            total.bytes_moved += r.bytes_moved;
            total.op_counters += r.op_counters;
            total.calibrated |= r.calibrated;
        }
        total.energy_total = total.energy_breakdown.total();
        total.dequant_overhead_fraction = total.overhead_cycles as f64 / total.cycles as f64;
        Some(total)
    }
}

/// Energy and traffic for a run whose timing is `cycles`.
pub fn energy_model(
    problem: &GemmProblem,
    cfg: &SystolicConfig,
    pipeline: Pipeline,
    cycles: &CycleBreakdown,
    counters: &OpCounters,
    table: &CostTable,
) -> Result<SimReport> {
    cfg.validate()?;
    let cost = table.get(cfg.pe_kind)?;
    let (m, n, k) = (problem.m as u64, problem.n as u64, problem.k as u64);
    let tile_rows = m.div_ceil(cfg.rows as u64);
    let tile_cols = n.div_ceil(cfg.cols as u64);

    let weight_bytes = (n * k * u64::from(cfg.weight_bits)).div_ceil(8);
    let param_bytes = n * problem.groups() as u64 * (SCALE_BYTES + ZERO_POINT_BYTES);
    let act_bytes = (m * k * u64::from(cfg.activation_bits())).div_ceil(8);
    let out_bytes = m * n * OUTPUT_BYTES;

    // Operands that do not fit in their half of the buffer are re-read from
    // DRAM for every tile that consumes them.
    let half_buffer = cfg.buffer_bytes / 2;
    let weight_fetches = if weight_bytes + param_bytes <= half_buffer {
        1
    } else {
        tile_rows
    };
    let act_fetches = if act_bytes <= half_buffer { 1 } else { tile_cols };

    let bytes_moved = BytesMoved {
        weights: weight_bytes * weight_fetches,
        activations: act_bytes * act_fetches,
        outputs: out_bytes,
        group_params: param_bytes * weight_fetches,
    };
    let buffer_bytes =
        (weight_bytes + param_bytes) * tile_rows + act_bytes * tile_cols + out_bytes;

    let dram = bytes_moved.total() as f64 * table.dram_energy_per_byte;
    let buffer = buffer_bytes as f64 * table.buffer_energy_per_byte;
    let core = counters.pe_ops as f64 * cost.power * table.mac_energy;
    let static_ = table.static_fraction * (dram + buffer + core);
    let energy_breakdown = EnergyBreakdown {
        dram,
        buffer,
        core,
        static_,
    };

    Ok(SimReport {
        pe_kind: cfg.pe_kind,
        pipeline,
        cycles: cycles.total,
        compute_cycles: cycles.compute,
        overhead_cycles: cycles.dequant_overhead,
        latency_seconds: cycles.total as f64 / cfg.frequency_hz,
        energy_total: energy_breakdown.total(),
        energy_breakdown,
        bytes_moved,
        op_counters: *counters,
        dequant_overhead_fraction: cycles.dequant_overhead as f64 / cycles.total as f64,
        calibrated: cost.calibrated,
    })
}

/// Timing plus energy with analytic op counters.
pub fn simulate(
    problem: &GemmProblem,
    cfg: &SystolicConfig,
    pipeline: Pipeline,
    table: &CostTable,
) -> Result<SimReport> {
    let cycles = cycle_model(problem, cfg, pipeline, table)?;
    let counters = OpCounters::analytic(problem, pipeline);
    energy_model(problem, cfg, pipeline, &cycles, &counters, table)
}
