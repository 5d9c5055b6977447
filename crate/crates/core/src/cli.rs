//! Run orchestration and machine-readable outputs.
//!
//! `metrics.csv` columns, in order:
//! `step, t, v_global, h_global, local_h_sum, swarm_lhs, swarm_rhs,
//! swarm_margin, min_individual_margin, norm_bound_lhs, norm_bound_rhs,
//! collision_stop`, then for each robot `i`: `h_local_i, v_local_i, delta_i,
//! lambda_i, h_self_rate_i, individual_margin_i`. Floats carry 17
//! significant digits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::metrics::StepMetrics;
use crate::scenario::{load_scenario, Scenario};
use crate::sim::{run_seeded, ControlMode, Frame, RunLog};

/// Lowest global barrier value counted as safe.
pub const SAFETY_TOL: f64 = -1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelection {
    Decentralized,
    Centralized,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<ControlMode> {
        match self {
            ModeSelection::Decentralized => vec![ControlMode::Decentralized],
            ModeSelection::Centralized => vec![ControlMode::Centralized],
            ModeSelection::Both => vec![ControlMode::Decentralized, ControlMode::Centralized],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub mode: ModeSelection,
    pub metrics_csv: bool,
    pub frames: bool,
    pub bound_report: bool,
    pub seed: Option<u64>,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_header(n_robots: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "t",
        "v_global",
        "h_global",
        "local_h_sum",
        "swarm_lhs",
        "swarm_rhs",
        "swarm_margin",
        "min_individual_margin",
        "norm_bound_lhs",
        "norm_bound_rhs",
        "collision_stop",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..n_robots {
        for name in ["h_local", "v_local", "delta", "lambda", "h_self_rate", "individual_margin"] {
            h.push(format!("{name}_{i}"));
        }
    }
    h
}

fn metrics_record(m: &StepMetrics) -> Vec<String> {
    let mut r = vec![
        m.step.to_string(),
        float(m.t),
        float(m.v_global),
        float(m.h_global),
        float(m.local_h_sum),
        float(m.swarm.lhs),
        float(m.swarm.rhs),
        float(m.swarm.margin()),
        float(m.min_individual_margin()),
        float(m.norm_bound_lhs),
        float(m.norm_bound_rhs),
        u8::from(m.collision_stop).to_string(),
    ];
    for (p, margin) in m.per_robot.iter().zip(&m.individual_margins) {
        r.extend([p.h_local, p.v_local, p.delta, p.lambda, p.h_self_rate, *margin].map(float));
    }
    r
}

pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics], n_robots: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(metrics_header(n_robots))?;
    for m in metrics {
        w.write_record(metrics_record(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frames(dir: &Path, frames: &[Frame]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in frames {
        let file = fs::File::create(dir.join(format!("{:04}.json", f.step)))?;
        serde_json::to_writer(std::io::BufWriter::new(file), f)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub min_margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn from_margins(margins: impl Iterator<Item = f64>) -> Self {
        let min_margin = margins.fold(f64::INFINITY, f64::min);
        BoundCheck { min_margin, pass: min_margin >= 0.0 }
    }
}

/// Minimum margins of the safety bounds over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// Per-robot sufficient condition.
    pub individual: BoundCheck,
    /// Swarm-level sufficient condition.
    pub swarm: BoundCheck,
    /// Non-neighbor versus neighbor density norms over the danger region.
    pub norm_ratio: BoundCheck,
    pub all_pass: bool,
}

impl BoundReport {
    pub fn from_metrics(metrics: &[StepMetrics]) -> Self {
        let individual = BoundCheck::from_margins(metrics.iter().map(StepMetrics::min_individual_margin));
        let swarm = BoundCheck::from_margins(metrics.iter().map(|m| m.swarm.margin()));
        let norm_ratio = BoundCheck::from_margins(metrics.iter().map(StepMetrics::norm_bound_margin));
        BoundReport { individual, swarm, norm_ratio, all_pass: individual.pass && swarm.pass && norm_ratio.pass }
    }
}

/// Statistics of per-robot control computation times, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p99: f64,
    pub max: f64,
}

pub fn report_timing(times: &[f64]) -> TimingStats {
    if times.is_empty() {
        return TimingStats { count: 0, mean: 0.0, median: 0.0, p99: 0.0, max: 0.0 };
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // nearest-rank percentile
    let rank = |q: f64| sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
    TimingStats {
        count: n,
        mean: sorted.iter().sum::<f64>() / n as f64,
        median: rank(0.5),
        p99: rank(0.99),
        max: sorted[n - 1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: ControlMode,
    pub seed: u64,
    pub steps: usize,
    pub robots: usize,
    pub initial_v: f64,
    pub final_v: f64,
    pub min_h: f64,
    pub final_h: f64,
    pub safe: bool,
    pub collision_stops: usize,
    pub timing: TimingStats,
}

impl Summary {
    pub fn new(scenario: &Scenario, seed: u64, log: &RunLog) -> Self {
        let min_h = log.min_h();
        Summary {
            scenario: scenario.name.clone(),
            mode: log.mode,
            seed,
            steps: log.metrics.len(),
            robots: log.final_positions.len(),
            initial_v: log.initial_v(),
            final_v: log.final_v,
            min_h,
            final_h: log.final_h,
            safe: min_h >= SAFETY_TOL,
            collision_stops: log.metrics.iter().filter(|m| m.collision_stop).count(),
            timing: report_timing(&log.decide_times),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    Ok(())
}

/// Writes every requested artifact for one run into `dir`.
pub fn write_run(dir: &Path, config: &RunConfig, scenario: &Scenario, seed: u64, log: &RunLog) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    if config.metrics_csv {
        write_metrics_csv(&dir.join("metrics.csv"), &log.metrics, log.final_positions.len())?;
    }
    if config.frames {
        write_frames(&dir.join("frames"), &log.frames)?;
    }
    if config.bound_report {
        write_json(&dir.join("bound_report.json"), &BoundReport::from_metrics(&log.metrics))?;
    }
    let summary = Summary::new(scenario, seed, log);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Loads, runs every selected mode and writes outputs. With more than one
/// mode each run goes to `out/<mode>/`.
pub fn run_command(config: &RunConfig) -> Result<Vec<Summary>> {
    let scenario = load_scenario(&config.scenario)?;
    let seed = config.seed.unwrap_or(scenario.sim.seed);
    let modes = config.mode.modes();
    let mut summaries = Vec::with_capacity(modes.len());
    for mode in &modes {
        let log = run_seeded(&scenario, *mode, seed)?;
        let dir = if modes.len() > 1 { config.out.join(mode.name()) } else { config.out.clone() };
        summaries.push(write_run(&dir, config, &scenario, seed, &log)?);
    }
    Ok(summaries)
}
