use std::path::PathBuf;

use clap::Args;
use mpx_core::dse::{default_design_space, dominated_flags, format_snr, sweep, DesignPoint, SweepData, SweepOutcome};
use mpx_core::pe::PeKind;
use mpx_core::workloads::{load_activation_samples, synth_weights};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::Context;

#[derive(Debug, Args)]
pub struct DseArgs {
    /// Activation samples (text or MPXT binary); synthetic when omitted.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// TOML file of `[[point]]` design points; the built-in space when omitted.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Output channels of the synthetic weight matrix.
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Reduction length when no samples are given.
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Synthetic activation rows when no samples are given.
    #[arg(long, default_value_t = 8)]
    tokens: usize,
    /// Also write the non-dominated points here as JSON.
    #[arg(long)]
    frontier_out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PointsFile {
    point: Vec<DesignPoint>,
}

#[derive(Serialize)]
struct Row<'a> {
    index: usize,
    descriptor: &'a str,
    pe_kind: PeKind,
    weight_scheme: String,
    rows: usize,
    cols: usize,
    snr_db: String,
    /// Signal over noise power, before the log.
    snr_ratio: String,
    hw_cost: f64,
    dominated: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    samples: Option<&'a PathBuf>,
    weights_shape: (usize, usize),
    activations_shape: (usize, usize),
    default_cost_table: bool,
    outcome: &'a SweepOutcome,
}

fn load_points(args: &DseArgs) -> Result<Vec<DesignPoint>, CliError> {
    let Some(path) = &args.points else {
        return Ok(default_design_space());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let file: PointsFile =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(file.point)
}

/// Quadratic reference for the Pareto flags: higher SNR and lower cost win.
fn brute_force_dominated(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(s, c)| {
            points
                .iter()
                .any(|&(s2, c2)| s2 >= s && c2 <= c && (s2 > s || c2 < c))
        })
        .collect()
}

pub fn run(ctx: &Context, args: &DseArgs) -> Result<(), CliError> {
    let activations = match &args.samples {
        Some(path) => load_activation_samples(path)?,
        None => synth_weights(args.tokens, args.k, ctx.config.seed.wrapping_add(1)),
    };
    if activations.is_empty() {
        return Err(CliError::Usage("activation samples are empty".into()));
    }
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let weights = synth_weights(args.n, activations.cols(), ctx.config.seed);
    let data = SweepData {
        weights,
        activations,
    };
    let points = load_points(args)?;
    let outcome = sweep(&points, &data, &ctx.cost_table)?;

    for f in &outcome.failures {
        eprintln!("point {} ({}) skipped: {}", f.index, f.descriptor, f.error);
    }
    if outcome.points.is_empty() {
        return Err(CliError::Failed("every design point failed".into()));
    }
    let pairs: Vec<(f64, f64)> = outcome.points.iter().map(|p| (p.snr_db, p.hw_cost)).collect();
    let flags: Vec<bool> = outcome.points.iter().map(|p| p.dominated).collect();
    if flags != dominated_flags(&pairs) || flags != brute_force_dominated(&pairs) {
        return Err(CliError::Failed(
            "Pareto flags disagree with the pairwise check".into(),
        ));
    }

    let rows: Vec<Row> = outcome
        .points
        .iter()
        .map(|p| Row {
            index: p.index,
            descriptor: &p.descriptor,
            pe_kind: p.design.pe_kind,
            weight_scheme: p.design.weight.to_string(),
            rows: p.design.rows,
            cols: p.design.cols,
            snr_db: format_snr(p.snr_db),
            snr_ratio: format_snr(10f64.powf(p.snr_db / 10.0)),
            hw_cost: p.hw_cost,
            dominated: p.dominated,
        })
        .collect();
    for p in outcome.frontier() {
        eprintln!(
            "frontier: {} snr {} dB cost {:.4}",
            p.descriptor,
            format_snr(p.snr_db),
            p.hw_cost
        );
    }
    if let Some(path) = &args.frontier_out {
        let frontier: Vec<_> = outcome.frontier().collect();
        let text = serde_json::to_string_pretty(&frontier)
            .map_err(|e| CliError::Failed(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
    }
    let report = Report {
        config: &ctx.config,
        samples: args.samples.as_ref(),
        weights_shape: data.weights.shape(),
        activations_shape: data.activations.shape(),
        default_cost_table: ctx.default_costs,
        outcome: &outcome,
    };
    ctx.emit(&report, &rows)
}
