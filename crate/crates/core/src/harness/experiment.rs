//! Experiment driver: runs a scenario in one control mode and writes the
//! trajectory log, per-region input logs and a summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::controller::{
    run_closed_loop, ClosedLoopRun, ControlMode, ControlStats, ControllerError, ViolationKind,
};
use crate::dynamics::{compute_equilibrium, DynamicsError};
use crate::network::{NetworkModel, Region};

use super::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    OpenLoop,
    Centralized,
    Distributed,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::OpenLoop => "open-loop",
            RunMode::Centralized => "centralized",
            RunMode::Distributed => "distributed",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open-loop" => Ok(RunMode::OpenLoop),
            "centralized" => Ok(RunMode::Centralized),
            "distributed" => Ok(RunMode::Distributed),
            _ => Err(format!(
                "unknown mode \"{s}\" (expected open-loop, centralized or distributed)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("distributed mode needs at least one region in the scenario")]
    NoRegions,
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BusExtremes {
    pub bus: u32,
    pub min_omega: f64,
    pub max_omega: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct InputPeak {
    pub bus: u32,
    pub peak_abs: f64,
}

/// Condensed results of one run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub mode: String,
    pub t_end: f64,
    pub min_constrained_omega: Option<f64>,
    pub max_constrained_omega: Option<f64>,
    pub earliest_violation_time: Option<f64>,
    pub worst_bound_violation: f64,
    pub stability_condition_holds: bool,
    pub last_nonzero_input_time: Option<f64>,
    pub terminal_distance_to_equilibrium: f64,
    pub recomputations: usize,
    pub optimized_solves: usize,
    pub fallbacks: usize,
    pub constrained: Vec<BusExtremes>,
    pub input_peaks: Vec<InputPeak>,
}

impl Summary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }
}

pub struct Experiment {
    pub mode: RunMode,
    pub run: ClosedLoopRun,
    pub regions: Vec<Region>,
    pub summary: Summary,
}

/// Runs `scenario` in `mode` up to `t_end` (scenario default if `None`).
pub fn run_experiment(
    scenario: &Scenario,
    mode: RunMode,
    t_end: Option<f64>,
    warm_start: Option<bool>,
) -> Result<Experiment, ExperimentError> {
    let (control, regions) = match mode {
        RunMode::OpenLoop => (ControlMode::OpenLoop, Vec::new()),
        RunMode::Centralized => (
            ControlMode::Centralized,
            vec![Region::whole(&scenario.model)],
        ),
        RunMode::Distributed => {
            if scenario.regions.is_empty() {
                return Err(ExperimentError::NoRegions);
            }
            (
                ControlMode::Distributed(scenario.regions.clone()),
                scenario.regions.clone(),
            )
        }
    };
    let mut config = scenario.config(control);
    if let Some(w) = warm_start {
        config.warm_start = w;
    }
    let mut settings = scenario.run;
    if let Some(t) = t_end {
        settings.t_end = t;
    }
    let run = run_closed_loop(
        &scenario.model,
        &scenario.signal,
        &config,
        &scenario.initial,
        &settings,
    )?;
    let summary = summarize(scenario, mode, &run, settings.t_end)?;
    Ok(Experiment {
        mode,
        run,
        regions,
        summary,
    })
}

fn summarize(
    scenario: &Scenario,
    mode: RunMode,
    run: &ClosedLoopRun,
    t_end: f64,
) -> Result<Summary, ExperimentError> {
    let model = &scenario.model;
    let log = &run.log;
    let constrained: Vec<BusExtremes> = model
        .constrained()
        .into_iter()
        .map(|i| {
            let (lo, hi) = log
                .omega
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
                    (lo.min(w[i]), hi.max(w[i]))
                });
            BusExtremes {
                bus: model.label(i),
                min_omega: lo,
                max_omega: hi,
            }
        })
        .collect();
    let input_peaks = model
        .controlled()
        .into_iter()
        .map(|i| InputPeak {
            bus: model.label(i),
            peak_abs: log.inputs.iter().fold(0.0, |m: f64, u| m.max(u[i].abs())),
        })
        .collect();
    let equilibrium = compute_equilibrium(model, &scenario.signal.settled(), &scenario.initial.f)?;
    let terminal = log.final_state().expect("log has at least one entry");
    let stats: &ControlStats = &run.stats;
    Ok(Summary {
        scenario: scenario.name.clone(),
        mode: mode.name().to_string(),
        t_end,
        min_constrained_omega: constrained.iter().map(|b| b.min_omega).reduce(f64::min),
        max_constrained_omega: constrained.iter().map(|b| b.max_omega).reduce(f64::max),
        earliest_violation_time: run
            .monitor
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::FrequencyBound)
            .map(|v| v.time),
        worst_bound_violation: run.monitor.worst_bound_violation(),
        stability_condition_holds: run.monitor.stability_holds(),
        last_nonzero_input_time: run.monitor.last_nonzero_input,
        terminal_distance_to_equilibrium: terminal.distance(&equilibrium.state(model)),
        recomputations: stats.recomputations,
        optimized_solves: stats.optimized,
        fallbacks: stats.fallbacks,
        constrained,
        input_peaks,
    })
}

/// Formats like C's `%.9g`: nine significant digits, trailing zeros dropped,
/// scientific notation outside `1e-5 <= |v| < 1e9`.
pub fn format_g9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    }
}

/// Header of the trajectory log.
pub fn trajectory_header(model: &NetworkModel) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=model.n_lines()).map(|j| format!("f_{j}")));
    for prefix in ["omega", "u", "p"] {
        cols.extend((0..model.n_buses()).map(|i| format!("{prefix}_{}", model.label(i))));
    }
    cols
}

pub fn trajectory_csv(model: &NetworkModel, run: &ClosedLoopRun) -> String {
    let log = &run.log;
    let mut out = trajectory_header(model).join(",");
    out.push('\n');
    for j in 0..log.len() {
        let row = std::iter::once(log.times[j])
            .chain(log.flows[j].iter().copied())
            .chain(log.omega[j].iter().copied())
            .chain(log.inputs[j].iter().copied())
            .chain(log.injections[j].iter().copied())
            .map(format_g9)
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Inputs of the controlled buses of one region over time.
pub fn region_inputs_csv(model: &NetworkModel, region: &Region, run: &ClosedLoopRun) -> String {
    let buses = region.controlled(model);
    let mut out = String::from("t");
    for &i in &buses {
        let _ = write!(out, ",u_{}", model.label(i));
    }
    out.push('\n');
    for (j, &t) in run.log.times.iter().enumerate() {
        out.push_str(&format_g9(t));
        for &i in &buses {
            out.push(',');
            out.push_str(&format_g9(run.log.inputs[j][i]));
        }
        out.push('\n');
    }
    out
}

/// Writes `trajectory.csv`, `inputs_region_<id>.csv` per region and
/// `summary.toml` into `dir`. Returns the written paths.
pub fn write_artifacts(
    scenario: &Scenario,
    experiment: &Experiment,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), ExperimentError> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
        Ok(())
    };
    put(
        "trajectory.csv".into(),
        trajectory_csv(&scenario.model, &experiment.run),
    )?;
    for region in &experiment.regions {
        put(
            format!("inputs_region_{}.csv", region.id),
            region_inputs_csv(&scenario.model, region, &experiment.run),
        )?;
    }
    put("summary.toml".into(), experiment.summary.to_toml())?;
    Ok(written)
}
