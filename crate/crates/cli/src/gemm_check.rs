use clap::{Args, ValueEnum};
use mpx_core::dse::matmul_transposed;
use mpx_core::mpgemm::{
    gemm_dequant_after, gemm_dequant_before, max_relative_error, quantize_activations_int8,
    Activations, GemmProblem,
};
use mpx_core::pe::PeKind;
use mpx_core::quant::{quantize, QuantScheme};
use mpx_core::workloads::synth_weights;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PeChoice {
    A8,
    A16,
    Both,
}

#[derive(Debug, Args)]
pub struct GemmCheckArgs {
    #[arg(long, default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 4096)]
    k: usize,
    /// Weight group size [default: 128].
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Random instances per PE.
    #[arg(long, default_value_t = 4)]
    instances: usize,
    #[arg(long, value_enum, default_value_t = PeChoice::Both)]
    pe: PeChoice,
    /// Largest accepted normwise relative error.
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

#[derive(Serialize)]
struct Row {
    instance: usize,
    pe_kind: PeKind,
    m: usize,
    n: usize,
    k: usize,
    g: usize,
    seed: u64,
    /// Dequantize-after output against the dense 64-bit oracle.
    after_vs_oracle: f64,
    before_vs_oracle: f64,
    after_vs_before: f64,
    /// Both pipelines produced bit-identical outputs.
    exact_match: bool,
    group_dequants: u64,
    dequant_mults: u64,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    ok: bool,
    tolerance: f64,
    max_rel_err: f64,
    rows: &'a [Row],
}

pub fn run(ctx: &Context, args: &GemmCheckArgs) -> Result<(), CliError> {
    let g = ctx.config.group_size;
    let problem = GemmProblem::new_padded(args.m, args.n, args.k, g, ctx.padding())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if args.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        return Err(CliError::Usage("--tolerance must be non-negative".into()));
    }
    let kinds: &[PeKind] = match args.pe {
        PeChoice::A8 => &[PeKind::MixPeA8],
        PeChoice::A16 => &[PeKind::MixPeA16],
        PeChoice::Both => &[PeKind::MixPeA8, PeKind::MixPeA16],
    };
    let scheme = QuantScheme::uint4_grouped(g).with_padding(ctx.padding());

    let mut rows = Vec::new();
    for instance in 0..args.instances {
        let seed = ctx.config.seed.wrapping_add(2 * instance as u64);
        let w = synth_weights(args.n, args.k, seed);
        let x = synth_weights(args.m, args.k, seed + 1);
        let wq = quantize(&w, &scheme)?;
        let w_hat = wq.dequantize();
        let xq = quantize_activations_int8(&x)?;
        let xh = x.to_half();
        for &kind in kinds {
            let (act, x_real) = match kind {
                PeKind::MixPeA8 => (Activations::Int8(&xq), xq.dequantize()),
                _ => (Activations::Fp16(&xh), xh.to_tensor()),
            };
            let oracle = matmul_transposed(&x_real, &w_hat)?;
            let (before, cb) = gemm_dequant_before(act, &wq, &problem)?;
            let (after, ca) = gemm_dequant_after(act, &wq, &problem, kind)?;
            rows.push(Row {
                instance,
                pe_kind: kind,
                m: args.m,
                n: args.n,
                k: args.k,
                g,
                seed,
                after_vs_oracle: max_relative_error(&after, &oracle)?,
                before_vs_oracle: max_relative_error(&before, &oracle)?,
                after_vs_before: max_relative_error(&after, &before)?,
                exact_match: after == before,
                group_dequants: ca.group_dequants,
                dequant_mults: cb.dequant_mults,
            });
        }
    }
    let max_rel_err = rows
        .iter()
        .map(|r| r.after_vs_oracle.max(r.before_vs_oracle).max(r.after_vs_before))
        .fold(0.0, f64::max);
    let ok = max_rel_err <= args.tolerance;
    eprintln!(
        "{} runs, max relative error {max_rel_err:.3e} (tolerance {:e}): {}",
        rows.len(),
        args.tolerance,
        if ok { "ok" } else { "FAILED" }
    );
    let report = Report {
        config: &ctx.config,
        ok,
        tolerance: args.tolerance,
        max_rel_err,
        rows: &rows,
    };
    ctx.emit(&report, &rows)?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "max relative error {max_rel_err:e} exceeds {:e}",
            args.tolerance
        )))
    }
}
