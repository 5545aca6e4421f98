use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use valley_cli::probe::ProbeArgs;
use valley_cli::protocols::{
    ConstantsArgs, OscillationArgs, ShiftScanArgs, SimulateArgs, SwaDirectionArgs, Theorem1Args, Theorem2Args,
    TrainArgs, CATALOG,
};
use valley_cli::{execute, ExperimentConfig};

#[derive(Parser)]
#[command(name = "valley", version, about = "Asymmetric valley experiments")]
struct Cli {
    /// Overrides the seed of the config or subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Directory receiving the artifacts and report.json.
    #[arg(long, short = 'o')]
    output_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Print the protocol catalog.
    ListProtocols,
    /// Run a JSON experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    ReportConstants(Direct<ConstantsArgs>),
    #[command(name = "simulate-1d")]
    Simulate1d(Direct<SimulateArgs>),
    #[command(name = "theorem1-verify")]
    Theorem1Verify(Direct<Theorem1Args>),
    #[command(name = "theorem2-verify")]
    Theorem2Verify(Direct<Theorem2Args>),
    ShiftScan(Direct<ShiftScanArgs>),
    #[command(name = "oscillation-1d")]
    Oscillation1d(Direct<OscillationArgs>),
    Train(Direct<TrainArgs>),
    SwaDirection(Direct<SwaDirectionArgs>),
    /// Geometry probes.
    Probe {
        #[command(subcommand)]
        kind: ProbeCommand,
    },
}

#[derive(Subcommand)]
enum ProbeCommand {
    Slice(Direct<ProbeArgs>),
    Classify(Direct<ProbeArgs>),
    FindAsym(Direct<ProbeArgs>),
    Neighborhood(Direct<ProbeArgs>),
    Interpolate(Direct<ProbeArgs>),
    RandomRay(Direct<ProbeArgs>),
    Stability(Direct<ProbeArgs>),
    BnCompare(Direct<ProbeArgs>),
}

#[derive(Args)]
struct Direct<T: Args> {
    #[command(flatten)]
    params: T,
    #[command(flatten)]
    output: Output,
}

impl<T: Args + Serialize> Direct<T> {
    fn config(&self, protocol: &str) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            protocol: protocol.to_string(),
            params: serde_json::to_value(&self.params)?,
            seed: 0,
            output_dir: self.output.output_dir.clone(),
        })
    }
}

fn config_for(command: &Command) -> Result<Option<ExperimentConfig>> {
    let cfg = match command {
        Command::ListProtocols => return Ok(None),
        Command::Run { config } => {
            let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?
        }
        Command::ReportConstants(d) => d.config("report-constants")?,
        Command::Simulate1d(d) => d.config("simulate-1d")?,
        Command::Theorem1Verify(d) => d.config("theorem1-verify")?,
        Command::Theorem2Verify(d) => d.config("theorem2-verify")?,
        Command::ShiftScan(d) => d.config("shift-scan")?,
        Command::Oscillation1d(d) => d.config("oscillation-1d")?,
        Command::Train(d) => d.config("train")?,
        Command::SwaDirection(d) => d.config("swa-direction")?,
        Command::Probe { kind } => match kind {
            ProbeCommand::Slice(d) => d.config("probe.slice")?,
            ProbeCommand::Classify(d) => d.config("probe.classify")?,
            ProbeCommand::FindAsym(d) => d.config("probe.find-asym")?,
            ProbeCommand::Neighborhood(d) => d.config("probe.neighborhood")?,
            ProbeCommand::Interpolate(d) => d.config("probe.interpolate")?,
            ProbeCommand::RandomRay(d) => d.config("probe.random-ray")?,
            ProbeCommand::Stability(d) => d.config("probe.stability")?,
            ProbeCommand::BnCompare(d) => d.config("probe.bn-compare")?,
        },
    };
    Ok(Some(cfg))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("VALLEY_THREADS") {
        let n: usize = v.parse().with_context(|| format!("VALLEY_THREADS=`{v}` is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| config_for(&cli.command));
    let config = match result {
        Ok(Some(mut cfg)) => {
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg
        }
        Ok(None) => {
            for e in CATALOG {
                println!("{:<20} {}\n{:<20} reproduces: {}", e.id, e.doc, "", e.reproduces);
            }
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match execute(config) {
        Ok(report) => {
            let summary = serde_json::json!({"verdicts": report.verdicts, "metrics": report.metrics});
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            if report.any_fail() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
