use clap::{Args, ValueEnum};
use mpx_core::pe::{
    check_fp16_scaling_exhaustive, check_w4a8_exhaustive, mixpe_a16_scale, mixpe_a8, CheckOutcome,
};
use mpx_core::Half;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::Context;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Fault {
    /// Drop the `x << 3` term of the W4A8 PE.
    A8,
    /// Let subnormals skip the shift in the binary16 scaler.
    A16,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Test-harness hook: run the checks against a deliberately broken PE.
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<Fault>,
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    ok: bool,
    w4a8: &'a CheckOutcome,
    fp16_scaling: &'a CheckOutcome,
}

#[derive(Serialize)]
struct Row<'a> {
    check: &'static str,
    checked: u64,
    passed: u64,
    ok: bool,
    first_failure_w: Option<u8>,
    first_failure_x: Option<&'a str>,
    first_failure_shift: Option<u32>,
    expected: Option<&'a str>,
    actual: Option<&'a str>,
}

fn row<'a>(check: &'static str, o: &'a CheckOutcome) -> Row<'a> {
    let f = o.first_failure.as_ref();
    Row {
        check,
        checked: o.checked,
        passed: o.passed,
        ok: o.ok(),
        first_failure_w: f.map(|c| c.w),
        first_failure_x: f.map(|c| c.x.as_str()),
        first_failure_shift: f.and_then(|c| c.shift),
        expected: f.map(|c| c.expected.as_str()),
        actual: f.map(|c| c.actual.as_str()),
    }
}

pub fn run(ctx: &Context, args: &VerifyArgs) -> Result<(), CliError> {
    let fault = args.inject_fault;
    let w4a8 = check_w4a8_exhaustive(|w, x| {
        let v = mixpe_a8(w, x);
        match fault {
            Some(Fault::A8) if w.bit(3) => v - (i16::from(x) << 3),
            _ => v,
        }
    });
    let fp16 = check_fp16_scaling_exhaustive(|x: Half, i| match fault {
        Some(Fault::A16) if x.is_subnormal() => x,
        _ => mixpe_a16_scale(x, i),
    });

    let ok = w4a8.ok() && fp16.ok();
    eprintln!(
        "{}/{} {}; {}/{} {}",
        w4a8.passed,
        w4a8.checked,
        if w4a8.ok() { "ok" } else { "FAILED" },
        fp16.passed,
        fp16.checked,
        if fp16.ok() { "ok" } else { "FAILED" },
    );
    for (name, o) in [("w4a8", &w4a8), ("fp16 scaling", &fp16)] {
        if let Some(c) = &o.first_failure {
            let shift = c.shift.map(|i| format!(" i={i}")).unwrap_or_default();
            eprintln!(
                "{name} counterexample: w={} x={}{shift}: expected {}, got {}",
                c.w, c.x, c.expected, c.actual
            );
        }
    }

    let report = Report {
        config: &ctx.config,
        ok,
        w4a8: &w4a8,
        fp16_scaling: &fp16,
    };
    ctx.emit(&report, &[row("w4a8", &w4a8), row("fp16_scaling", &fp16)])?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Failed("PE verification found mismatches".into()))
    }
}
