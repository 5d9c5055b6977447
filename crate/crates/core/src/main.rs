use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use fpcbf::cli::{report_timing, run_command, ModeSelection, RunConfig};
use fpcbf::scenario::load_scenario;
use fpcbf::sim::{run_seeded, ControlMode};

#[derive(Parser)]
#[command(name = "fpcbf", version, about = "Decentralized density control of robot swarms with safety constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Decentralized,
    Centralized,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write metrics.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "decentralized")]
        mode: Mode,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write frames/NNNN.json.
        #[arg(long)]
        frames: bool,
        /// Write bound_report.json.
        #[arg(long)]
        bound_report: bool,
    },
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
    /// Report per-robot control computation times.
    Timing {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, mode, out, seed, frames, bound_report } => {
            let mode = match mode {
                Mode::Decentralized => ModeSelection::Decentralized,
                Mode::Centralized => ModeSelection::Centralized,
                Mode::Both => ModeSelection::Both,
            };
            let config = RunConfig { scenario, out, mode, metrics_csv: true, frames, bound_report, seed };
            let summaries = run_command(&config).with_context(|| format!("running {}", config.scenario.display()))?;
            let mut safe = true;
            for s in &summaries {
                println!(
                    "{}: V {:.6e} -> {:.6e}, min h {:.6e}, mean solve {:.3} ms",
                    s.mode.name(),
                    s.initial_v,
                    s.final_v,
                    s.min_h,
                    s.timing.mean * 1e3
                );
                if !s.safe {
                    eprintln!("safety violation: {} run reached h = {:.6e}", s.mode.name(), s.min_h);
                    safe = false;
                }
            }
            Ok(if safe { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            println!("{}: ok ({} robots, {} steps, dt {})", s.name, s.robot_count(), s.sim.steps, s.sim.dt);
            Ok(ExitCode::SUCCESS)
        }
        Command::Timing { scenario, seed } => {
            let s = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let log = run_seeded(&s, ControlMode::Decentralized, seed.unwrap_or(s.sim.seed))?;
            println!("{}", serde_json::to_string_pretty(&report_timing(&log.decide_times))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
