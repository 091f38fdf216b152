use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vanhove::harness::{self, ExperimentConfig, ExperimentId, RunOptions, Status, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "vanhove", version, about = "Scaling-law experiments for Fermi surfaces with Van Hove points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Shell volumes over a window of scales.
    Shellvol(RunArgs),
    /// Shell volumes restricted to small balls.
    BallShellvol(RunArgs),
    /// Flatness exponent and transversality floor.
    Nesting(RunArgs),
    /// Overlapping-loop triple-shell volume.
    OverlapI2(RunArgs),
    /// Surface-surface overlap volume.
    OverlapW(RunArgs),
    /// Power counting for one graph and scale assignment.
    DiagramsReport(RunArgs),
    /// Second-order self-energy and regularity probe.
    Selfenergy(RunArgs),
    /// Density of states histogram.
    Dos(RunArgs),
    /// Gap equation and critical temperatures.
    Bcs(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the experiment's main sample budget.
    #[arg(long)]
    samples: Option<u64>,
    /// Output prefix; files are PREFIX.csv, PREFIX.json and friends.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentId, RunArgs) {
        match self {
            Command::Shellvol(a) => (ExperimentId::Shellvol, a),
            Command::BallShellvol(a) => (ExperimentId::BallShellvol, a),
            Command::Nesting(a) => (ExperimentId::Nesting, a),
            Command::OverlapI2(a) => (ExperimentId::OverlapI2, a),
            Command::OverlapW(a) => (ExperimentId::OverlapW, a),
            Command::DiagramsReport(a) => (ExperimentId::DiagramsReport, a),
            Command::Selfenergy(a) => (ExperimentId::Selfenergy, a),
            Command::Dos(a) => (ExperimentId::Dos, a),
            Command::Bcs(a) => (ExperimentId::Bcs, a),
        }
    }
}

fn run(id: ExperimentId, args: RunArgs) -> Result<Status> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if cfg.experiment != id {
        bail!("config {} is for `{}`, not `{}`", args.config.display(), cfg.experiment, id);
    }
    if let Some(s) = args.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(n) = args.samples {
        cfg = cfg.with_budget(n)?;
    }
    if args.threads == Some(0) {
        bail!("--threads must be positive");
    }
    let bundle = harness::run_experiment(&cfg, RunOptions { threads: args.threads })?;
    let prefix = harness::output_prefix(&cfg, args.out.as_deref());
    let files = harness::write_bundle(&bundle, &prefix)?;
    let s = &bundle.summary;
    println!("{} seed={} hash={}", s.experiment, s.seed, &s.config_hash[..12]);
    for (k, v) in &s.metrics {
        println!("  {k} = {v}");
    }
    for c in &s.checks {
        let verdict = match c.ok {
            Some(true) => "ok",
            Some(false) => "FAIL",
            None => "n/a",
        };
        println!("  check {}: {:?} in [{:?}, {:?}] {}", c.metric, c.value, c.bound.min, c.bound.max, verdict);
    }
    for n in &s.notes {
        println!("  note: {n}");
    }
    for f in files {
        println!("  wrote {}", f.display());
    }
    println!("status: {:?}", s.status);
    Ok(s.status)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (id, args) = cli.command.split();
    match run(id, args) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
