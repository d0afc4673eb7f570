//! `cpflow <command> --config <file> --out <dir> [--seed <int>] [--refine <k>]`
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for usage
//! or configuration errors, 3 when a computation aborts.

mod config;
mod experiments;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, ValueEnum};

use config::ExperimentConfig;
use report::{Recorder, Report};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{command} failed: {source}")]
    Compute {
        command: &'static str,
        source: cpflow::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Usage(_) => 2,
            Self::Io(_) | Self::Compute { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Delta,
    Decay,
    Covariance,
    GaugeCheck,
    Transitivity,
    Corner,
    WeightsUnitality,
    /// Every command listed under `experiments` in the config.
    Batch,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Delta => "delta",
            Self::Decay => "decay",
            Self::Covariance => "covariance",
            Self::GaugeCheck => "gauge-check",
            Self::Transitivity => "transitivity",
            Self::Corner => "corner",
            Self::WeightsUnitality => "weights-unitality",
            Self::Batch => "batch",
        }
    }

    /// Runnable experiments by name; `batch` is not one of them.
    pub fn from_name(name: &str) -> Option<Self> {
        Self::value_variants()
            .iter()
            .copied()
            .find(|c| *c != Self::Batch && c.name() == name)
    }
}

#[derive(Debug, Parser)]
#[command(name = "cpflow", version, about = "Run a cpflow experiment and write its report")]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seeds.rng`.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid halvings for convergence-order records; overrides `covariance.refinements`.
    #[arg(long)]
    refine: Option<usize>,
}

fn run_one(command: Command, cfg: &ExperimentConfig, seed: u64, refine: usize, out: &Path) -> Result<Report, CliError> {
    let start = Instant::now();
    let mut rec = Recorder::default();
    let res = match command {
        Command::Delta => experiments::delta(cfg, &mut rec),
        Command::Decay => experiments::decay(cfg, seed, &mut rec),
        Command::Covariance => experiments::covariance(cfg, seed, refine, &mut rec),
        Command::GaugeCheck => experiments::gauge_check(cfg, seed, &mut rec),
        Command::Transitivity => experiments::transitivity(cfg, seed, &mut rec),
        Command::Corner => experiments::corner(cfg, &mut rec),
        Command::WeightsUnitality => experiments::weights_unitality(cfg, seed, &mut rec),
        Command::Batch => unreachable!("batch is expanded by the caller"),
    };
    res.map_err(|source| CliError::Compute {
        command: command.name(),
        source,
    })?;
    let mut echo = cfg.clone();
    echo.seeds.rng = seed;
    echo.covariance.refinements = refine;
    let report = Report {
        experiment: command.name().into(),
        seed,
        config: echo,
        pass: rec.checks.iter().all(|c| c.pass),
        checks: rec.checks,
        curves: rec
            .curves
            .iter()
            .map(|c| format!("{}_{}.csv", command.name(), c.name))
            .collect(),
        notes: rec.notes,
        wall_time_s: start.elapsed().as_secs_f64(),
        finished_at_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    report.write(out, &rec.curves)?;
    Ok(report)
}

fn run(args: &Args) -> Result<bool, CliError> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seeds.rng);
    let refine = args.refine.unwrap_or(cfg.covariance.refinements);
    if refine > 6 {
        return Err(CliError::Config(vec!["--refine must be at most 6".into()]));
    }
    let commands = if args.command == Command::Batch {
        if cfg.experiments.is_empty() {
            return Err(CliError::Usage("batch needs a nonempty `experiments` list".into()));
        }
        cfg.experiments
            .iter()
            .map(|n| Command::from_name(n).expect("validated"))
            .collect()
    } else {
        vec![args.command]
    };
    let mut all = true;
    for command in commands {
        let report = run_one(command, &cfg, seed, refine, &args.out)?;
        let failing: Vec<_> = report.failing().collect();
        println!(
            "{}: {} ({} checks, {:.2}s)",
            report.experiment,
            if report.pass { "pass" } else { "FAIL" },
            report.checks.len(),
            report.wall_time_s
        );
        for c in &failing {
            eprintln!("  failed {}: value {} expected {}", c.name, c.value, c.expected);
        }
        all &= report.pass;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
