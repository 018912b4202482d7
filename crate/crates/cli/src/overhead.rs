use std::path::PathBuf;

use clap::Args;
use mpx_core::arch::{cycle_model, SystolicConfig};
use mpx_core::mpgemm::{GemmProblem, Pipeline};
use mpx_core::pe::PeKind;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::simulate::load_model;
use crate::Context;

#[derive(Debug, Args)]
pub struct OverheadArgs {
    /// Take `n` and `k` from this model's hidden size.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Weight group size [default: 128].
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 4096)]
    k: usize,
    /// Batch sizes (the `m` dimension).
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    batches: Vec<usize>,
    #[arg(long = "pe", value_delimiter = ',', default_value = "int8-mul,mix-pe-a8")]
    pe: Vec<PeKind>,
}

#[derive(Serialize)]
struct Row {
    batch: usize,
    pe_kind: PeKind,
    pipeline: Pipeline,
    n: usize,
    k: usize,
    g: usize,
    cycles: u64,
    compute_cycles: u64,
    overhead_cycles: u64,
    dequant_overhead_fraction: f64,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    rows: &'a [Row],
}

pub fn run(ctx: &Context, args: &OverheadArgs) -> Result<(), CliError> {
    let (n, k) = match ctx.config.model {
        Some(_) => {
            let m = load_model(ctx)?;
            (m.hidden_size, m.hidden_size)
        }
        None => (args.n, args.k),
    };
    if args.batches.is_empty() {
        return Err(CliError::Usage("--batches needs at least one value".into()));
    }
    let g = ctx.config.group_size;
    let mut rows = Vec::new();
    for &batch in &args.batches {
        let problem = GemmProblem::new_padded(batch, n, k, g, ctx.padding())?;
        for &kind in &args.pe {
            let pipeline = Pipeline::for_pe(kind);
            let mut cfg = SystolicConfig::new(kind);
            cfg.group_size = g;
            let c = cycle_model(&problem, &cfg, pipeline, &ctx.cost_table)?;
            rows.push(Row {
                batch,
                pe_kind: kind,
                pipeline,
                n,
                k,
                g,
                cycles: c.total,
                compute_cycles: c.compute,
                overhead_cycles: c.dequant_overhead,
                dequant_overhead_fraction: c.dequant_overhead as f64 / c.total as f64,
            });
        }
    }
    ctx.emit(
        &Report {
            config: &ctx.config,
            rows: &rows,
        },
        &rows,
    )
}
