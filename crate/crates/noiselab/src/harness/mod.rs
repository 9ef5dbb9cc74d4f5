//! Config-driven runs, sweeps and the acceptance suite.

pub mod accept;
mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};

pub use accept::{run_accept, run_suite, AcceptOptions, AcceptReport, CriterionResult};
pub use config::{
    BenchCompareParams, BenchRunParams, EtpGridParams, EtpRunParams, ExperimentConfig, Format, Kind,
    MemorizationParams, Params, RateSweepParams, RegionCheckParams, Variant,
};
pub use experiments::{compare_flags, curve_table, etp_point, execute, EtpPoint, EARLY_STEPS};
pub use output::{aggregate, fmt_f64, Aggregate, Artifacts, RunSummary, SeedMetrics, Table, SCHEMA_VERSION};

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "NOISELAB_OUT";
pub const DEFAULT_OUT: &str = "noiselab-out";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the config's `output_dir` and the environment.
    pub out_root: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub dir: PathBuf,
}

/// `--out`, then the config's `output_dir`, then `$NOISELAB_OUT`, then `./noiselab-out`.
pub fn output_root(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn finish(cfg: &ExperimentConfig, opts: &RunOptions, jobs: usize) -> Result<RunOutcome> {
    let (summary, files) = execute(cfg, jobs)?;
    let dir = files.write_atomically(&output_root(opts.out_root.as_deref(), cfg), &cfg.name)?;
    Ok(RunOutcome { summary, dir })
}

/// Runs one experiment and writes `<root>/<name>/`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    finish(cfg, opts, 1)
}

/// Runs the points of a grid config on up to `jobs` workers. Output is
/// identical to [`run`] for any worker count.
pub fn sweep(cfg: &ExperimentConfig, opts: &RunOptions, jobs: usize) -> Result<RunOutcome> {
    if !cfg.kind().is_grid() {
        return Err(Error::config("kind", format!("`{}` is not a grid kind; use run", cfg.kind().as_str())));
    }
    finish(cfg, opts, jobs)
}

pub fn run_path(path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    run(&ExperimentConfig::load(path)?, opts)
}

pub fn sweep_path(path: &Path, opts: &RunOptions, jobs: usize) -> Result<RunOutcome> {
    sweep(&ExperimentConfig::load(path)?, opts, jobs)
}
