//! `star-kg <command> --config <path> [--out <dir>] [--threads N]`

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};

use crate::commands::Ctx;
use crate::config::ExperimentConfig;
use crate::output::{Output, Report};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Tabulate xi, s, w and eigenfunctions over a lambda grid
    Eigen,
    /// Resolvent, kernel slice and comparison with the finite-difference oracle
    Resolvent,
    /// Diagonal against matrix weights and projection experiments
    Measure,
    /// Transform round trip and Plancherel report
    Transform,
    /// Wave frames, energy, oracle comparison and tunnel fits
    Evolve,
    /// Full invariant suite with a pass/fail summary
    Verify,
}

#[derive(Debug, Parser)]
#[command(name = "star-kg", version, about = "Klein-Gordon spectral experiments on a star network")]
struct Cli {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to $OUT_DIR, then ./out
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    }
    let dir = cli
        .out
        .or_else(|| std::env::var_os("OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match run(cli.command, &cfg, &dir) {
        Ok(report) => {
            for c in &report.checks {
                println!(
                    "{} {} residual {:.3e} tolerance {:.1e}{}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.residual,
                    c.tolerance,
                    c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
                );
            }
            println!("report written to {}", dir.join("report.json").display());
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG_ERROR)
        }
    }
}

fn run(command: Command, cfg: &ExperimentConfig, dir: &std::path::Path) -> anyhow::Result<Report> {
    let name = format!("{command:?}").to_lowercase();
    let mut cx = Ctx {
        cfg,
        net: cfg.network()?,
        opts: cfg.spectral_options()?,
        report: Report::new(&name),
        out: Output::new(dir),
    };
    match command {
        Command::Eigen => commands::eigen(&mut cx),
        Command::Resolvent => commands::resolvent(&mut cx),
        Command::Measure => commands::measure(&mut cx),
        Command::Transform => commands::transform(&mut cx),
        Command::Evolve => commands::evolve(&mut cx),
        Command::Verify => commands::verify(&mut cx),
    }?;
    cx.out.finish(cx.report).context("writing outputs")
}
