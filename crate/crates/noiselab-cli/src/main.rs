use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use noiselab::harness::{self, AcceptOptions, RunOptions, RunOutcome};

/// Label-noise laboratory: closed-form rates, noise models, training dynamics.
///
/// Output goes to `--out`, else the config's `output_dir`, else
/// `$NOISELAB_OUT`, else `./noiselab-out`.
#[derive(Parser)]
#[command(name = "noiselab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Exit nonzero when any bound check fails.
        #[arg(long)]
        strict: bool,
        /// Output root directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid config with several workers.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: u32,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite and print one line per criterion.
    Accept {
        /// Smaller samples; for smoke testing only.
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn report(outcome: &RunOutcome, strict: bool) -> ExitCode {
    let s = &outcome.summary;
    println!("{} ({}) -> {}", s.name, s.kind, outcome.dir.display());
    println!("config hash {}", s.config_hash);
    for (name, ok) in &s.checks {
        println!("  {:<24} {}", name, if *ok { "pass" } else { "FAIL" });
    }
    if strict && !s.passed {
        eprintln!("error: bound checks failed (--strict)");
        return ExitCode::from(EXIT_FAILED_CHECK);
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res: anyhow::Result<ExitCode> = (|| match cli.cmd {
        Cmd::Run { config, strict, out } => {
            let outcome = harness::run_path(&config, &RunOptions { out_root: out })
                .with_context(|| format!("running {}", config.display()))?;
            Ok(report(&outcome, strict))
        }
        Cmd::Sweep { config, jobs, strict, out } => {
            let outcome = harness::sweep_path(&config, &RunOptions { out_root: out }, jobs as usize)
                .with_context(|| format!("sweeping {}", config.display()))?;
            Ok(report(&outcome, strict))
        }
        Cmd::Accept { quick, out } => {
            let report = harness::run_accept(&AcceptOptions { quick, ..Default::default() })?;
            let root = out
                .or_else(|| std::env::var_os(harness::OUT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(harness::DEFAULT_OUT));
            let dir = report.files.write_atomically(&root, "accept")?;
            print!("{}", report.table());
            println!("outputs in {}", dir.display());
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILED_CHECK) })
        }
    })();
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
