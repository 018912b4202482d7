//! `mpx`: verification, simulation and design sweeps over the mixed-precision
//! GEMM accelerator model.

mod config;
mod error;
mod gemm_check;
mod output;
mod overhead;
mod simulate;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpx_core::arch::{default_cost_table, CostTable};
use mpx_core::quant::GroupPadding;

use crate::config::{Format, RunConfig, RunConfigFile};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mpx", version, about = "Mixed-precision GEMM accelerator model")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML file with default values for the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reject group sizes that do not divide the reduction length (default).
    #[arg(long, global = true, conflicts_with = "pad_groups")]
    strict: bool,
    /// Zero-pad ragged final groups instead of rejecting them.
    #[arg(long, global = true)]
    pad_groups: bool,
    /// Cost table TOML; defaults to the built-in table.
    #[arg(long, global = true)]
    cost_table: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exhaustively check the shift&add PEs against reference arithmetic.
    VerifyPe(verify::VerifyArgs),
    /// Compare dequantize-after against dequantize-before on random GEMMs.
    GemmCheck(gemm_check::GemmCheckArgs),
    /// Cycle and energy report for every GEMM of a model.
    Simulate(simulate::SimulateArgs),
    /// Dequantization overhead fraction across batch sizes.
    Overhead(overhead::OverheadArgs),
    /// SNR versus hardware cost sweep with Pareto flags.
    Dse(sweep::DseArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::VerifyPe(_) => "verify-pe",
            Command::GemmCheck(_) => "gemm-check",
            Command::Simulate(_) => "simulate",
            Command::Overhead(_) => "overhead",
            Command::Dse(_) => "dse",
        }
    }

    fn model(&self) -> Option<PathBuf> {
        match self {
            Command::Simulate(a) => a.model.clone(),
            Command::Overhead(a) => a.model.clone(),
            _ => None,
        }
    }

    fn batch(&self) -> Option<usize> {
        match self {
            Command::Simulate(a) => a.batch,
            _ => None,
        }
    }

    fn group_size(&self) -> Option<usize> {
        match self {
            Command::GemmCheck(a) => a.group_size,
            Command::Simulate(a) => a.group_size,
            Command::Overhead(a) => a.group_size,
            _ => None,
        }
    }
}

/// Everything a command needs besides its own flags.
pub struct Context {
    pub config: RunConfig,
    pub cost_table: CostTable,
    /// The cost table is the built-in one rather than a file.
    pub default_costs: bool,
}

impl Context {
    pub fn padding(&self) -> GroupPadding {
        if self.config.strict {
            GroupPadding::Strict
        } else {
            GroupPadding::ZeroPad
        }
    }

    pub fn emit<R: serde::Serialize, Row: serde::Serialize>(
        &self,
        report: &R,
        rows: &[Row],
    ) -> Result<(), CliError> {
        output::write_report(self.config.format, self.config.out.as_deref(), report, rows)
    }
}

fn configure_threads() -> Result<Option<usize>, CliError> {
    let Ok(raw) = std::env::var("MPX_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("MPX_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Some(n))
}

fn resolve(cli: &Cli) -> Result<Context, CliError> {
    let g = &cli.global;
    let file = match &g.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let pad = g.pad_groups || (!g.strict && file.pad_groups.unwrap_or(false));
    if file.strict == Some(true) && file.pad_groups == Some(true) {
        return Err(CliError::Usage("config sets both strict and pad_groups".into()));
    }
    let cost_table_path = g.cost_table.clone().or(file.cost_table);
    let (cost_table, default_costs) = match &cost_table_path {
        Some(path) => (CostTable::load(path)?, false),
        None => (default_cost_table(), true),
    };
    let group_size = cli.command.group_size().or(file.group_size).unwrap_or(128);
    if group_size == 0 {
        return Err(CliError::Usage("group size must be positive".into()));
    }
    let config = RunConfig {
        command: cli.command.name().into(),
        format: g.format.or(file.format).unwrap_or_default(),
        seed: g.seed.or(file.seed).unwrap_or(0),
        out: g.out.clone().or(file.out),
        strict: !pad,
        cost_table: cost_table_path,
        model: cli.command.model().or(file.model),
        batch: cli.command.batch().or(file.batch),
        group_size,
        threads: configure_threads()?,
    };
    Ok(Context {
        config,
        cost_table,
        default_costs,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = resolve(&cli)?;
    match &cli.command {
        Command::VerifyPe(a) => verify::run(&ctx, a),
        Command::GemmCheck(a) => gemm_check::run(&ctx, a),
        Command::Simulate(a) => simulate::run(&ctx, a),
        Command::Overhead(a) => overhead::run(&ctx, a),
        Command::Dse(a) => sweep::run(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mpx: {e}");
            e.exit_code()
        }
    }
}
