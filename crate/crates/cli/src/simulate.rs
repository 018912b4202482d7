use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use mpx_core::arch::{simulate, CostTable, SimReport, SystolicConfig};
use mpx_core::mpgemm::Pipeline;
use mpx_core::pe::PeKind;
use mpx_core::workloads::{expand_workload_padded, GemmRole, ModelSpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::Context;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model description TOML.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tokens per GEMM (the `m` dimension) [default: 8].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Weight group size [default: 128].
    #[arg(long)]
    pub group_size: Option<usize>,
    /// PE kinds to simulate; repeat or comma-separate.
    #[arg(long = "pe", value_delimiter = ',', default_value = "mix-pe-a8")]
    pe: Vec<PeKind>,
    /// Force a pipeline instead of the one each PE kind runs.
    #[arg(long)]
    pipeline: Option<Pipeline>,
    /// Reference for speedup and energy ratios.
    #[arg(long, default_value = "int8-mul")]
    baseline: PeKind,
    /// Array rows.
    #[arg(long, default_value_t = 4)]
    rows: usize,
    /// Array columns.
    #[arg(long, default_value_t = 4)]
    cols: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    /// `gemm` for one weight GEMM, `total` for the whole model.
    scope: &'static str,
    layer: Option<usize>,
    role: Option<GemmRole>,
    pe_kind: PeKind,
    pipeline: Pipeline,
    m: usize,
    n: Option<usize>,
    k: Option<usize>,
    g: usize,
    cycles: u64,
    compute_cycles: u64,
    overhead_cycles: u64,
    latency_seconds: f64,
    energy_total: f64,
    energy_dram: f64,
    energy_buffer: f64,
    energy_core: f64,
    energy_static: f64,
    bytes_moved: u64,
    dequant_overhead_fraction: f64,
    speedup: f64,
    energy_ratio: f64,
    calibrated: bool,
}

#[derive(Serialize)]
struct Provenance<'a> {
    workload: &'static str,
    default_cost_table: bool,
    /// PE kinds whose cost entries are calibration constants.
    calibrated: BTreeMap<PeKind, bool>,
    cost_table: &'a CostTable,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    model: &'a ModelSpec,
    baseline: PeKind,
    array: (usize, usize),
    provenance: Provenance<'a>,
    totals: Vec<Row>,
    rows: &'a [Row],
}

fn row(scope: &'static str, r: &SimReport, base: &SimReport) -> Row {
    Row {
        scope,
        layer: None,
        role: None,
        pe_kind: r.pe_kind,
        pipeline: r.pipeline,
        m: 0,
        n: None,
        k: None,
        g: 0,
        cycles: r.cycles,
        compute_cycles: r.compute_cycles,
        overhead_cycles: r.overhead_cycles,
        latency_seconds: r.latency_seconds,
        energy_total: r.energy_total,
        energy_dram: r.energy_breakdown.dram,
        energy_buffer: r.energy_breakdown.buffer,
        energy_core: r.energy_breakdown.core,
        energy_static: r.energy_breakdown.static_,
        bytes_moved: r.bytes_moved.total(),
        dequant_overhead_fraction: r.dequant_overhead_fraction,
        speedup: base.cycles as f64 / r.cycles as f64,
        energy_ratio: r.energy_total / base.energy_total,
        calibrated: r.calibrated,
    }
}

pub fn load_model(ctx: &Context) -> Result<ModelSpec, CliError> {
    let path = ctx
        .config
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    Ok(ModelSpec::load(path)?)
}

pub fn run(ctx: &Context, args: &SimulateArgs) -> Result<(), CliError> {
    let model = load_model(ctx)?;
    let batch = ctx.config.batch.unwrap_or(8);
    if batch == 0 {
        return Err(CliError::Usage("--batch must be positive".into()));
    }
    if let Some(Pipeline::After) = args.pipeline {
        if let Some(k) = args.pe.iter().find(|k| !k.is_mixpe()) {
            return Err(CliError::Usage(format!(
                "{k} has no dequantize-after datapath"
            )));
        }
    }
    let g = ctx.config.group_size;
    let workload = expand_workload_padded(&model, batch, g, ctx.padding())?;
    let table = &ctx.cost_table;

    let config_for = |kind: PeKind| {
        let mut cfg = SystolicConfig::new(kind);
        cfg.rows = args.rows;
        cfg.cols = args.cols;
        cfg.group_size = g;
        cfg
    };
    let run_kind = |kind: PeKind, pipeline: Pipeline| -> Result<Vec<SimReport>, CliError> {
        let cfg = config_for(kind);
        workload
            .gemms
            .iter()
            .map(|t| simulate(&t.problem, &cfg, pipeline, table).map_err(CliError::from))
            .collect()
    };

    let baseline = run_kind(args.baseline, Pipeline::for_pe(args.baseline))?;
    let base_total = SimReport::aggregate(&baseline).expect("models have at least one layer");

    let mut rows = Vec::new();
    let mut totals = Vec::new();
    for &kind in &args.pe {
        let pipeline = args.pipeline.unwrap_or(Pipeline::for_pe(kind));
        let reports = run_kind(kind, pipeline)?;
        for ((t, r), b) in workload.gemms.iter().zip(&reports).zip(&baseline) {
            rows.push(Row {
                layer: Some(t.layer),
                role: Some(t.role),
                m: t.problem.m,
                n: Some(t.problem.n),
                k: Some(t.problem.k),
                g,
                ..row("gemm", r, b)
            });
        }
        let total = SimReport::aggregate(&reports).expect("models have at least one layer");
        totals.push(Row {
            m: batch,
            g,
            ..row("total", &total, &base_total)
        });
    }
    for t in &totals {
        eprintln!(
            "{} {}: {} cycles, speedup {:.3}x, energy {:.3}x vs {}{}",
            model.name,
            t.pe_kind,
            t.cycles,
            t.speedup,
            t.energy_ratio,
            args.baseline,
            if t.calibrated { " (calibrated cost)" } else { "" }
        );
    }
    rows.extend(totals.iter().cloned());

    let calibrated = args
        .pe
        .iter()
        .chain([&args.baseline])
        .map(|&k| Ok((k, table.get(k)?.calibrated)))
        .collect::<Result<_, CliError>>()?;
    let report = Report {
        config: &ctx.config,
        model: &model,
        baseline: args.baseline,
        array: (args.rows, args.cols),
        provenance: Provenance {
            workload: "prefill-like dense GEMMs with m = batch tokens",
            default_cost_table: ctx.default_costs,
            calibrated,
            cost_table: table,
        },
        totals,
        rows: &rows,
    };
    ctx.emit(&report, &rows)
}
