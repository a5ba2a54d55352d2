//! Receding-horizon controllers (centralized and regional), the closed-loop
//! driver, and runtime monitors.

use log::{debug, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{plant_advance, DynamicsError, State};
use crate::network::{FreqBand, NetworkModel, Region};
use crate::optimizer::{assemble_qp, build_phi_cvx, solve_mpc, CondensePolicy, MpcQp, QpSolution};
use crate::qp::{QpSettings, QpStatus, WarmStart};
use crate::reference::{rollout_reference, RefGains, ReferenceError};
use crate::signals::{Forecast, ForecastProvider, InjectionSignal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error("invalid regions: {0}")]
    Regions(String),
    #[error("initial frequency {omega} at bus {bus} is outside its safe bounds")]
    OutsideSafeSet { bus: u32, omega: f64 },
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone)]
pub enum ControlMode {
    /// Controller disabled, zero input.
    OpenLoop,
    Centralized,
    Distributed(Vec<Region>),
}

impl ControlMode {
    pub fn name(&self) -> &'static str {
        match self {
            ControlMode::OpenLoop => "open-loop",
            ControlMode::Centralized => "centralized",
            ControlMode::Distributed(_) => "distributed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Prediction sampling period `T`.
    pub period: f64,
    /// Horizon length `N`.
    pub horizon: usize,
    /// Time between recomputations, a multiple of the logging step.
    pub recompute_interval: f64,
    /// Barrier gains, one per bus (read at controlled buses).
    pub gains: Vec<RefGains>,
    /// Input weights `c_i`, one per bus (read at controlled buses).
    pub weights: Vec<f64>,
    pub forecast: ForecastProvider,
    pub solver: QpSettings,
    pub condense: CondensePolicy,
    pub warm_start: bool,
    pub mode: ControlMode,
}

impl ControllerConfig {
    /// Defaults: `T = 0.001`, `N = 200`, recompute every `10 T`, unit gains and weights.
    pub fn new(model: &NetworkModel, mode: ControlMode) -> Self {
        Self {
            period: 0.001,
            horizon: 200,
            recompute_interval: 0.01,
            gains: vec![RefGains::default(); model.n_buses()],
            weights: vec![1.0; model.n_buses()],
            forecast: ForecastProvider::default(),
            solver: QpSettings::default(),
            condense: CondensePolicy::default(),
            warm_start: false,
            mode,
        }
    }

    pub fn validate(&self, model: &NetworkModel) -> Result<(), ControllerError> {
        let bad = |msg: String| Err(ControllerError::Config(msg));
        if !(self.period > 0.0) {
            return bad(format!("period must be positive, got {}", self.period));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one step".into());
        }
        if !(self.recompute_interval >= self.period * (1.0 - 1e-12)) {
            return bad(format!(
                "recompute interval {} is shorter than the period {}",
                self.recompute_interval, self.period
            ));
        }
        if self.gains.len() != model.n_buses() || self.weights.len() != model.n_buses() {
            return bad("gains and weights need one entry per bus".into());
        }
        for i in model.controlled() {
            let g = self.gains[i];
            if !(g.upper > 0.0 && g.lower > 0.0 && self.weights[i] > 0.0) {
                return bad(format!(
                    "bus {}: gains and weight must be positive",
                    model.label(i)
                ));
            }
        }
        if let ControlMode::Distributed(regions) = &self.mode {
            let report = crate::network::validate_regions(model, regions);
            if !report.is_ok() {
                return Err(ControllerError::Regions(report.to_string()));
            }
        }
        Ok(())
    }

    /// Prediction steps between recomputations, used to shift warm starts.
    fn shift_steps(&self) -> usize {
        (self.recompute_interval / self.period).round() as usize
    }
}

/// True iff `omega * u <= 0` outside the open threshold band and `u = 0` inside.
pub fn check_stability_condition(omega: f64, u: f64, thresholds: FreqBand) -> bool {
    if thresholds.contains_open(omega) {
        u == 0.0
    } else {
        omega * u <= 0.0
    }
}

/// Boundary flows of `region` at flows `f`, as constant injections in local
/// bus order: inflow minus outflow over the region's boundary lines.
pub fn fold_boundary_flows(model: &NetworkModel, region: &Region, f: &[f64]) -> Vec<f64> {
    debug_assert_eq!(f.len(), model.n_lines());
    let mut folded = vec![0.0; region.buses.len()];
    for e in &region.boundary {
        let local = region
            .local_index(e.inside)
            .expect("boundary endpoint inside");
        if e.inside_is_positive {
            folded[local] -= f[e.line];
        } else {
            folded[local] += f[e.line];
        }
    }
    folded
}

/// How a regional input was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Every mode interior: the input is zero without solving.
    Interior,
    Optimized,
    /// Reference input used instead of the optimizer's.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct RegionalOutcome {
    /// `(global bus, input)` for the region's controlled buses.
    pub inputs: Vec<(usize, f64)>,
    pub kind: StepKind,
    pub iterations: usize,
    /// Assembled problem and its solution, kept for warm starts.
    pub solved: Option<(MpcQp, QpSolution)>,
}

fn regional_state(region: &Region, x: &State) -> State {
    State {
        f: region.interior_lines.iter().map(|&k| x.f[k]).collect(),
        omega: region.buses.iter().map(|&i| x.omega[i]).collect(),
    }
}

/// Largest constraint violation of a shifted solution still used as a warm start.
const WARM_START_SLACK: f64 = 1e-5;

/// Solves the regional problem for `region` at state `x` with the (global)
/// injection forecast. Boundary flows are folded into the regional forecast.
pub fn regional_solve(
    model: &NetworkModel,
    region: &Region,
    x: &State,
    forecast: &Forecast,
    config: &ControllerConfig,
    previous: Option<&(MpcQp, QpSolution)>,
) -> Result<RegionalOutcome, ControllerError> {
    let sub = region.subnetwork();
    let x_local = regional_state(region, x);
    let mut fc = forecast.restrict(&region.buses);
    fc.add_constant(&fold_boundary_flows(model, region, &x.f));
    let gains: Vec<RefGains> = region.buses.iter().map(|&i| config.gains[i]).collect();
    let weights: Vec<f64> = region.buses.iter().map(|&i| config.weights[i]).collect();
    let reference = rollout_reference(sub, &x_local, &fc, &gains, config.horizon, config.period)?;

    let controlled: Vec<usize> = sub.controlled();
    let to_global = |u: &[f64]| -> Vec<(usize, f64)> {
        controlled
            .iter()
            .map(|&l| (region.buses[l], u[l]))
            .collect()
    };
    let fallback = |reason: &str| {
        warn!("region {}: {reason}; applying reference input", region.id);
        RegionalOutcome {
            inputs: to_global(&reference.trajectory.inputs[0]),
            kind: StepKind::Fallback,
            iterations: 0,
            solved: None,
        }
    };

    if let Some(i) = sub.constrained().into_iter().find(|&i| {
        let b = sub.buses()[i].safe_bounds.expect("constrained");
        !b.contains_closed(x_local.omega[i])
    }) {
        return Ok(fallback(&format!(
            "frequency at bus {} is outside its safe bounds",
            sub.label(i)
        )));
    }
    if !reference.certificate.is_valid() {
        return Ok(fallback("reference certificate failed"));
    }
    let phi = build_phi_cvx(sub, &reference.trajectory);
    if phi.all_interior() {
        return Ok(RegionalOutcome {
            inputs: to_global(&vec![0.0; sub.n_buses()]),
            kind: StepKind::Interior,
            iterations: 0,
            solved: None,
        });
    }
    let formulation = config.condense.select(sub, config.horizon);
    let mpc = match assemble_qp(
        sub,
        &x_local,
        &fc.columns,
        &phi,
        &weights,
        config.period,
        formulation,
    ) {
        Ok(mpc) => mpc,
        Err(e) => return Ok(fallback(&format!("assembly failed: {e}"))),
    };
    // The certified reference is feasible, and optimal whenever its inputs
    // are all zero, so it seeds every solve. With warm starts on, the shifted
    // previous solution replaces it only if it is nearly feasible for the new
    // modes and cheaper; otherwise it tends to start ADMM far from the new
    // optimum.
    let p = &mpc.problem;
    let seed = mpc.encode(&reference.trajectory);
    let shifted = previous
        .filter(|_| config.warm_start)
        .and_then(|(qp, sol)| mpc.shifted_warm_start(sub, qp, &sol.x, &sol.y, config.shift_steps()))
        .filter(|w| {
            p.constraint_violation(&w.x) <= WARM_START_SLACK
                && p.objective(&w.x) < p.objective(&seed)
        });
    let warm = shifted.unwrap_or_else(|| WarmStart {
        x: seed,
        y: vec![0.0; p.n_rows()],
    });
    let solution = match solve_mpc(sub, &mpc, &config.solver, Some(&warm)) {
        Ok(s) => s,
        Err(e) => return Ok(fallback(&format!("solver error: {e}"))),
    };
    if solution.status != QpStatus::Optimal {
        return Ok(fallback(&format!("solver status {:?}", solution.status)));
    }
    debug!(
        "region {}: {} iterations, objective {:.6e}",
        region.id, solution.iterations, solution.objective
    );
    Ok(RegionalOutcome {
        inputs: to_global(solution.first_input()),
        kind: StepKind::Optimized,
        iterations: solution.iterations,
        solved: Some((mpc, solution)),
    })
}

/// Input from the whole-network problem. Runs the regional path on the region
/// covering every bus, which folds no boundary flows.
pub fn centralized_step(
    model: &NetworkModel,
    x: &State,
    forecast: &Forecast,
    config: &ControllerConfig,
) -> Result<Vec<f64>, ControllerError> {
    let outcome = regional_solve(model, &Region::whole(model), x, forecast, config, None)?;
    Ok(scatter(model.n_buses(), std::slice::from_ref(&outcome)))
}

/// Input from independent regional problems, solved in parallel. Buses in no
/// region receive zero.
pub fn distributed_step(
    model: &NetworkModel,
    regions: &[Region],
    x: &State,
    forecast: &Forecast,
    config: &ControllerConfig,
) -> Result<Vec<f64>, ControllerError> {
    let outcomes = regions
        .par_iter()
        .map(|r| regional_solve(model, r, x, forecast, config, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(scatter(model.n_buses(), &outcomes))
}

fn scatter(n: usize, outcomes: &[RegionalOutcome]) -> Vec<f64> {
    let mut u = vec![0.0; n];
    for o in outcomes {
        for &(i, v) in &o.inputs {
            u[i] = v;
        }
    }
    u
}

/// Counters over a closed-loop run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlStats {
    pub recomputations: usize,
    pub interior: usize,
    pub optimized: usize,
    pub fallbacks: usize,
    pub max_iterations: usize,
}

/// Stateful controller: keeps the previous regional solutions for warm starts.
pub struct Controller<'a> {
    model: &'a NetworkModel,
    config: &'a ControllerConfig,
    regions: Vec<Region>,
    previous: Vec<Option<(MpcQp, QpSolution)>>,
    pub stats: ControlStats,
}

impl<'a> Controller<'a> {
    pub fn new(
        model: &'a NetworkModel,
        config: &'a ControllerConfig,
    ) -> Result<Self, ControllerError> {
        config.validate(model)?;
        let regions = match &config.mode {
            ControlMode::OpenLoop => Vec::new(),
            ControlMode::Centralized => vec![Region::whole(model)],
            ControlMode::Distributed(regions) => regions.clone(),
        };
        let previous = vec![None; regions.len()];
        Ok(Self {
            model,
            config,
            regions,
            previous,
            stats: ControlStats::default(),
        })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Input to apply from time `t` at state `x`.
    pub fn compute(&mut self, x: &State, forecast: &Forecast) -> Result<Vec<f64>, ControllerError> {
        let (model, config) = (self.model, self.config);
        let outcomes = self
            .regions
            .par_iter()
            .zip(self.previous.par_iter())
            .map(|(r, prev)| regional_solve(model, r, x, forecast, config, prev.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let u = scatter(model.n_buses(), &outcomes);
        self.stats.recomputations += 1;
        for (slot, o) in self.previous.iter_mut().zip(outcomes) {
            match o.kind {
                StepKind::Interior => self.stats.interior += 1,
                StepKind::Optimized => self.stats.optimized += 1,
                StepKind::Fallback => self.stats.fallbacks += 1,
            }
            self.stats.max_iterations = self.stats.max_iterations.max(o.iterations);
            *slot = o.solved;
        }
        Ok(u)
    }
}

/// Logged trajectories, one entry per logged instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationLog {
    pub times: Vec<f64>,
    pub flows: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub injections: Vec<Vec<f64>>,
}

impl SimulationLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<State> {
        Some(State {
            f: self.flows.last()?.clone(),
            omega: self.omega.last()?.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Frequency outside the safe bounds of a constrained bus.
    FrequencyBound,
    /// Sign or dead-zone condition broken at a controlled bus.
    StabilityCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub time: f64,
    pub bus: u32,
    pub kind: ViolationKind,
    /// Distance outside the bounds, or the offending input magnitude.
    pub magnitude: f64,
}

/// Checks computed from a log after the fact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorReport {
    /// Per logged instant: stability condition at every controlled bus.
    pub stability_ok: Vec<bool>,
    /// Per logged instant: every constrained frequency within its bounds.
    pub invariance_ok: Vec<bool>,
    /// Last logged time with any nonzero input.
    pub last_nonzero_input: Option<f64>,
    pub violations: Vec<Violation>,
}

impl MonitorReport {
    pub fn from_log(model: &NetworkModel, log: &SimulationLog) -> Self {
        let mut report = MonitorReport::default();
        let controlled = model.controlled();
        let constrained = model.constrained();
        for (j, &t) in log.times.iter().enumerate() {
            let (w, u) = (&log.omega[j], &log.inputs[j]);
            let mut stable = true;
            for &i in &controlled {
                let thr = model.buses()[i].thresholds.expect("controlled");
                if !check_stability_condition(w[i], u[i], thr) {
                    stable = false;
                    report.violations.push(Violation {
                        time: t,
                        bus: model.label(i),
                        kind: ViolationKind::StabilityCondition,
                        magnitude: u[i].abs(),
                    });
                }
            }
            let mut inside = true;
            for &i in &constrained {
                let b = model.buses()[i].safe_bounds.expect("constrained");
                let excess = (b.lower - w[i]).max(w[i] - b.upper);
                if excess > 0.0 {
                    inside = false;
                    report.violations.push(Violation {
                        time: t,
                        bus: model.label(i),
                        kind: ViolationKind::FrequencyBound,
                        magnitude: excess,
                    });
                }
            }
            if u.iter().any(|&v| v != 0.0) {
                report.last_nonzero_input = Some(t);
            }
            report.stability_ok.push(stable);
            report.invariance_ok.push(inside);
        }
        report
    }

    pub fn stability_holds(&self) -> bool {
        self.stability_ok.iter().all(|&b| b)
    }

    pub fn invariance_holds(&self) -> bool {
        self.invariance_ok.iter().all(|&b| b)
    }

    /// Largest bound violation, zero if none.
    pub fn worst_bound_violation(&self) -> f64 {
        self.violations
            .iter()
            .filter(|v| v.kind == ViolationKind::FrequencyBound)
            .fold(0.0, |m, v| m.max(v.magnitude))
    }
}

/// Simulation timing: plant integration and logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub t_end: f64,
    pub log_step: f64,
    /// RK4 steps per logging step.
    pub substeps: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            t_end: 40.0,
            log_step: 0.01,
            substeps: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub log: SimulationLog,
    pub monitor: MonitorReport,
    pub stats: ControlStats,
}

/// Simulates the plant from `x0`, recomputing the input every
/// `recompute_interval` and holding it in between.
pub fn run_closed_loop(
    model: &NetworkModel,
    signal: &InjectionSignal,
    config: &ControllerConfig,
    x0: &State,
    run: &RunSettings,
) -> Result<ClosedLoopRun, ControllerError> {
    x0.check(model)?;
    if signal.n_buses() != model.n_buses() {
        return Err(DynamicsError::Dimension {
            what: "injection signal",
            expected: model.n_buses(),
            got: signal.n_buses(),
        }
        .into());
    }
    for i in model.constrained() {
        let b = model.buses()[i].safe_bounds.expect("constrained");
        if !b.contains_closed(x0.omega[i]) {
            return Err(ControllerError::OutsideSafeSet {
                bus: model.label(i),
                omega: x0.omega[i],
            });
        }
    }
    if !(run.log_step > 0.0 && run.t_end >= 0.0) {
        return Err(ControllerError::Config("log step must be positive".into()));
    }
    let ratio = config.recompute_interval / run.log_step;
    let every = ratio.round() as usize;
    if every == 0 || (ratio - every as f64).abs() > 1e-9 * ratio {
        return Err(ControllerError::Config(format!(
            "recompute interval {} is not a multiple of the log step {}",
            config.recompute_interval, run.log_step
        )));
    }
    let mut controller = Controller::new(model, config)?;
    let open_loop = matches!(config.mode, ControlMode::OpenLoop);
    let n_log = (run.t_end / run.log_step).round() as usize;
    let substeps = run.substeps.max(1);
    let h = run.log_step / substeps as f64;

    let mut log = SimulationLog::default();
    let mut x = x0.clone();
    let mut u = vec![0.0; model.n_buses()];
    for j in 0..=n_log {
        let t = j as f64 * run.log_step;
        if !open_loop && j % every == 0 {
            let forecast = config
                .forecast
                .forecast(signal, t, config.horizon, config.period);
            u = controller.compute(&x, &forecast)?;
        }
        log.times.push(t);
        log.flows.push(x.f.clone());
        log.omega.push(x.omega.clone());
        log.inputs.push(u.clone());
        log.injections.push(signal.at(t));
        if j == n_log {
            break;
        }
        for s in 0..substeps {
            let p = signal.at(t + (s as f64 + 0.5) * h);
            x = plant_advance(model, &x, &p, &u, h, 1)?;
        }
    }
    let monitor = MonitorReport::from_log(model, &log);
    Ok(ClosedLoopRun {
        log,
        monitor,
        stats: controller.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Bus, Line};

    fn two_bus() -> NetworkModel {
        let bus = Bus::plain(1, 0.5, 1.0)
            .controlled(FreqBand::symmetric(0.1))
            .constrained(FreqBand::symmetric(0.2));
        NetworkModel::new(
            vec![bus, Bus::plain(2, 0.5, 1.0)],
            vec![Line::new(0, 1, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn stability_condition_examples() {
        let thr = FreqBand::symmetric(0.1);
        assert!(check_stability_condition(0.15, -0.5, thr));
        assert!(check_stability_condition(0.05, 0.0, thr));
        assert!(!check_stability_condition(0.05, 0.1, thr));
        assert!(!check_stability_condition(-0.15, -0.1, thr));
    }

    #[test]
    fn fold_single_bus_region() {
        let model = two_bus();
        let region = Region::new(&model, 0, &[0]).unwrap();
        assert_eq!(fold_boundary_flows(&model, &region, &[0.4]), vec![-0.4]);
        let other = Region::new(&model, 1, &[1]).unwrap();
        assert_eq!(fold_boundary_flows(&model, &other, &[0.4]), vec![0.4]);
        assert_eq!(
            fold_boundary_flows(&model, &Region::whole(&model), &[0.4]),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn equilibrium_gives_zero_input() {
        let model = two_bus();
        let config = ControllerConfig::new(&model, ControlMode::Centralized);
        let signal = InjectionSignal::constant(&[0.0, 0.0]);
        let fc = config
            .forecast
            .forecast(&signal, 0.0, config.horizon, config.period);
        let u = centralized_step(&model, &State::zeros(&model), &fc, &config).unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_start_outside_bounds() {
        let model = two_bus();
        let config = ControllerConfig::new(&model, ControlMode::Centralized);
        let signal = InjectionSignal::constant(&[0.0, 0.0]);
        let x0 = State {
            f: vec![0.0],
            omega: vec![0.3, 0.0],
        };
        let run = RunSettings {
            t_end: 0.1,
            ..Default::default()
        };
        assert!(matches!(
            run_closed_loop(&model, &signal, &config, &x0, &run),
            Err(ControllerError::OutsideSafeSet { bus: 1, .. })
        ));
    }
}
