//! `localsgd-lab`: run, sweep, verify and advise.

mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use localsgd_lab::advisor::{self, AdviceInput};
use localsgd_lab::config::{build_problem, ProblemConfig, RunConfig};
use localsgd_lab::objectives::{Problem, QuadraticPairProblem};
use localsgd_lab::output::{self, Summary};
use localsgd_lab::simulator::{self, RunOptions, SweepAxis};
use localsgd_lab::verify::{self, VerifyOptions};

use args::{Cli, Command, RunArgs};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lab(#[from] localsgd_lab::Error),
}

type CliResult<T> = Result<T, CliError>;

const EXIT_DIVERGED: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Run { run, out } => cmd_run(&run, &out),
        Command::Sweep { run, axis, values, out } => cmd_sweep(&run, &axis, &values, &out),
        Command::Verify { quick, threads } => cmd_verify(quick, threads),
        Command::Advise { run } => cmd_advise(&run),
    }
}

fn run_options(args: &RunArgs) -> RunOptions {
    RunOptions {
        threads: args.threads,
        diagnostics: args.diagnostics,
        ..RunOptions::default()
    }
}

fn report(dir: &Path, s: &Summary) {
    let num = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.6e}"));
    println!(
        "{}: loss {}, grad_norm_sq {}, dist_to_opt {}, syncs {}, {:.1} ms -> {}",
        s.algorithm,
        num(s.final_loss),
        num(s.final_grad_norm_sq),
        num(s.final_dist_to_opt),
        s.syncs,
        s.wall_ms,
        dir.display()
    );
}

fn cmd_run(args: &RunArgs, out: &Path) -> CliResult<u8> {
    let cfg = args.to_config()?.resolved();
    let p = build_problem(&cfg)?;
    let result = simulator::run_with(&cfg, p.as_ref(), &run_options(args))?;
    let summary = output::write_run_dir(out, &result, p.as_ref())?;
    report(out, &summary);
    if let Some(d) = &result.diagnostics {
        println!(
            "diagnostics: max |sum delta| {:.3e}, average-update residual {:.3e}, direct-form gaps {:.3e} / {:.3e}, C = {}",
            d.max_delta_sum,
            d.max_average_update_residual,
            d.max_delta_form_gap,
            d.max_v_form_gap,
            d.c_constant.map_or_else(|| "n/a".into(), |c| format!("{c:.6e}"))
        );
    }
    if let Some(msg) = &result.divergence {
        eprintln!("diverged: {msg}");
        return Ok(EXIT_DIVERGED);
    }
    Ok(0)
}

fn cmd_sweep(args: &RunArgs, axis: &str, values: &[String], out: &Path) -> CliResult<u8> {
    let axis: SweepAxis = axis.parse()?;
    if values.is_empty() {
        return Err(CliError::Config("--values needs at least one value".into()));
    }
    let base = args.to_config()?.resolved();
    let points = simulator::sweep(&base, axis, values, &run_options(args))?;
    let dirs = output::write_sweep(out, axis, &points)?;
    let mut diverged = false;
    for (pt, dir) in points.iter().zip(&dirs) {
        let p = build_problem(&pt.result.config)?;
        report(dir, &Summary::of(&pt.result, p.as_ref())?);
        diverged |= pt.result.diverged;
    }
    println!("wrote {}", out.join(output::SWEEP_FILE).display());
    Ok(if diverged { EXIT_DIVERGED } else { 0 })
}

fn cmd_verify(quick: bool, threads: usize) -> CliResult<u8> {
    let opts = VerifyOptions {
        threads,
        ..if quick { VerifyOptions::quick() } else { VerifyOptions::full() }
    };
    let report = verify::verify(&opts)?;
    println!("{report}");
    Ok(if report.all_pass() { 0 } else { 1 })
}

/// The quadratic's smoothness does not depend on the worker count, so it can
/// be advised for any `N`.
fn advice_problem(cfg: &RunConfig) -> CliResult<Box<dyn Problem>> {
    match &cfg.problem {
        ProblemConfig::Quad { b_param, sigma } if cfg.workers != 2 => {
            Ok(Box::new(QuadraticPairProblem::new(*b_param, *sigma)))
        }
        _ => Ok(build_problem(cfg)?),
    }
}

fn cmd_advise(args: &RunArgs) -> CliResult<u8> {
    let cfg = args.to_config_unchecked()?;
    if cfg.workers == 0 {
        return Err(CliError::Config("need at least one worker".into()));
    }
    let p = advice_problem(&cfg)?;
    let input = AdviceInput {
        workers: cfg.workers,
        ..AdviceInput::from_run(&cfg, p.as_ref())
    };
    println!("{}", advisor::advise(input));
    Ok(0)
}
