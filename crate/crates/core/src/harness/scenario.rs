//! TOML scenario files: network, injections, controller settings, regions,
//! initial state and run settings.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::controller::{ControlMode, ControllerConfig, RunSettings};
use crate::dynamics::{compute_equilibrium, DynamicsError, State};
use crate::network::{validate_regions, Bus, FreqBand, Line, NetworkError, NetworkModel, Region};
use crate::optimizer::CondensePolicy;
use crate::qp::QpSettings;
use crate::reference::RefGains;
use crate::signals::{BusProfile, ForecastProvider, InjectionSignal};

pub const FORMAT_VERSION: u32 = 1;

const IEEE39: &str = include_str!("../../data/ieee39.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("unknown bus id {0}")]
    UnknownBus(u32),
    #[error("bus {bus}: {message}")]
    Bus { bus: u32, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Regions(String),
    #[error("initial frequency {omega} at bus {bus} is outside its safe bounds")]
    OutsideSafeSet { bus: u32, omega: f64 },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    format_version: u32,
    name: String,
    #[serde(default)]
    description: Option<String>,
    initial: RawInitial,
    #[serde(default)]
    controller: RawController,
    #[serde(default)]
    run: RawRun,
    bus: Vec<RawBus>,
    #[serde(default)]
    line: Vec<RawLine>,
    #[serde(default)]
    region: Vec<RawRegion>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawInitial {
    Named(String),
    Explicit(RawExplicitState),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExplicitState {
    f: Vec<f64>,
    omega: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    id: u32,
    inertia: f64,
    damping: f64,
    injection: RawInjection,
    #[serde(default)]
    thresholds: Option<[f64; 2]>,
    #[serde(default)]
    safe_bounds: Option<[f64; 2]>,
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    gains: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawInjection {
    Constant {
        value: f64,
    },
    Sinusoidal {
        base: f64,
        amplitude: f64,
        start: f64,
        end: f64,
    },
    Piecewise {
        initial: f64,
        #[serde(default)]
        breakpoints: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: u32,
    to: u32,
    susceptance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRegion {
    Explicit { buses: Vec<u32> },
    Hops { center: u32, hops: usize },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    period: Option<f64>,
    horizon: Option<usize>,
    recompute_interval: Option<f64>,
    forecast: Option<String>,
    warm_start: Option<bool>,
    condense: Option<String>,
    condense_threshold: Option<usize>,
    #[serde(default)]
    solver: RawSolver,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eps_abs: Option<f64>,
    eps_rel: Option<f64>,
    max_iter: Option<usize>,
    polish: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    t_end: Option<f64>,
    log_step: Option<f64>,
    substeps: Option<usize>,
    output: Option<PathBuf>,
}

/// Controller settings shared by every control mode.
#[derive(Debug, Clone)]
pub struct ControllerSettings {
    pub period: f64,
    pub horizon: usize,
    pub recompute_interval: f64,
    pub forecast: ForecastProvider,
    pub warm_start: bool,
    pub condense: CondensePolicy,
    pub solver: QpSettings,
    pub gains: Vec<RefGains>,
    pub weights: Vec<f64>,
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub model: NetworkModel,
    pub signal: InjectionSignal,
    pub controller: ControllerSettings,
    pub regions: Vec<Region>,
    pub initial: State,
    pub run: RunSettings,
    pub output: Option<PathBuf>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        build(raw)
    }

    /// The bundled 39-bus scenario.
    pub fn ieee39() -> Self {
        Self::from_toml(IEEE39).expect("bundled scenario is valid")
    }

    pub fn bundled_source() -> &'static str {
        IEEE39
    }

    pub fn config(&self, mode: ControlMode) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            period: c.period,
            horizon: c.horizon,
            recompute_interval: c.recompute_interval,
            gains: c.gains.clone(),
            weights: c.weights.clone(),
            forecast: c.forecast,
            solver: c.solver.clone(),
            condense: c.condense,
            warm_start: c.warm_start,
            mode,
        }
    }
}

/// Reads a scenario file; the path `builtin:ieee39` selects the bundled one.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    if path.as_os_str() == "builtin:ieee39" {
        return Scenario::from_toml(IEEE39);
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml(&text)
}

fn parse_error(text: &str, e: &toml::de::Error) -> ScenarioError {
    let offset = e.span().map_or(0, |s| s.start).min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    ScenarioError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

fn band(bus: u32, what: &str, v: [f64; 2]) -> Result<FreqBand, ScenarioError> {
    if !(v[0] < v[1]) {
        return Err(ScenarioError::Bus {
            bus,
            message: format!("{what} must be [lower, upper] with lower < upper"),
        });
    }
    Ok(FreqBand::new(v[0], v[1]))
}

fn profile(bus: u32, raw: &RawInjection) -> Result<BusProfile, ScenarioError> {
    Ok(match raw {
        RawInjection::Constant { value } => BusProfile::Constant(*value),
        RawInjection::Sinusoidal {
            base,
            amplitude,
            start,
            end,
        } => {
            if !(start < end) {
                return Err(ScenarioError::Bus {
                    bus,
                    message: "sinusoidal injection needs start < end".into(),
                });
            }
            BusProfile::Sinusoidal {
                base: *base,
                amplitude: *amplitude,
                start: *start,
                end: *end,
            }
        }
        RawInjection::Piecewise {
            initial,
            breakpoints,
        } => {
            if breakpoints.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                return Err(ScenarioError::Bus {
                    bus,
                    message: "piecewise breakpoints must have increasing times".into(),
                });
            }
            BusProfile::Piecewise {
                initial: *initial,
                breakpoints: breakpoints.iter().map(|b| (b[0], b[1])).collect(),
            }
        }
    })
}

fn positive(what: &str, v: f64) -> Result<f64, ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ScenarioError::Invalid(format!(
            "{what} must be positive, got {v}"
        )))
    }
}

fn build(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    if raw.format_version != FORMAT_VERSION {
        return Err(ScenarioError::Version(raw.format_version));
    }
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut buses = Vec::with_capacity(raw.bus.len());
    let mut profiles = Vec::with_capacity(raw.bus.len());
    let mut gains = Vec::with_capacity(raw.bus.len());
    let mut weights = Vec::with_capacity(raw.bus.len());
    for (i, b) in raw.bus.iter().enumerate() {
        if index.insert(b.id, i).is_some() {
            return Err(NetworkError::DuplicateBus(b.id).into());
        }
        let mut bus = Bus::plain(b.id, b.inertia, b.damping);
        if let Some(t) = b.thresholds {
            bus = bus.controlled(band(b.id, "thresholds", t)?);
        } else if b.weight.is_some() || b.gains.is_some() {
            return Err(ScenarioError::Bus {
                bus: b.id,
                message: "weight and gains apply only to controlled buses (declare thresholds)"
                    .into(),
            });
        }
        if let Some(s) = b.safe_bounds {
            bus = bus.constrained(band(b.id, "safe_bounds", s)?);
        }
        buses.push(bus);
        profiles.push(profile(b.id, &b.injection)?);
        let g = b.gains.unwrap_or([1.0, 1.0]);
        gains.push(RefGains::new(g[0], g[1]));
        weights.push(b.weight.unwrap_or(1.0));
    }
    let lookup = |id: u32| index.get(&id).copied().ok_or(ScenarioError::UnknownBus(id));
    let lines = raw
        .line
        .iter()
        .map(|l| Ok(Line::new(lookup(l.from)?, lookup(l.to)?, l.susceptance)))
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let model = NetworkModel::new(buses, lines)?;
    for i in model.controlled() {
        let g = gains[i];
        if !(g.upper > 0.0 && g.lower > 0.0) {
            return Err(ScenarioError::Bus {
                bus: model.label(i),
                message: "gains must be positive".into(),
            });
        }
        if !(weights[i] > 0.0) {
            return Err(ScenarioError::Bus {
                bus: model.label(i),
                message: "weight must be positive".into(),
            });
        }
    }

    let mut regions = Vec::with_capacity(raw.region.len());
    for (id, r) in raw.region.iter().enumerate() {
        let members = match r {
            RawRegion::Explicit { buses } => buses
                .iter()
                .map(|&b| lookup(b))
                .collect::<Result<Vec<_>, _>>()?,
            RawRegion::Hops { center, hops } => model.k_hop_neighborhood(lookup(*center)?, *hops),
        };
        regions.push(Region::new(&model, id, &members)?);
    }
    if !regions.is_empty() {
        let report = validate_regions(&model, &regions);
        if !report.is_ok() {
            return Err(ScenarioError::Regions(
                report.to_string().trim_end().to_string(),
            ));
        }
    }

    let signal = InjectionSignal { profiles };
    let initial = match raw.initial {
        RawInitial::Named(name) if name == "equilibrium" => {
            let eq = compute_equilibrium(&model, &signal.at(0.0), &vec![0.0; model.n_lines()])?;
            eq.state(&model)
        }
        RawInitial::Named(other) => {
            return Err(ScenarioError::Invalid(format!(
                "initial must be \"equilibrium\" or a table with f and omega, got \"{other}\""
            )))
        }
        RawInitial::Explicit(s) => {
            let state = State {
                f: s.f,
                omega: s.omega,
            };
            state.check(&model)?;
            state
        }
    };
    for i in model.constrained() {
        let b = model.buses()[i].safe_bounds.expect("constrained");
        if !b.contains_closed(initial.omega[i]) {
            return Err(ScenarioError::OutsideSafeSet {
                bus: model.label(i),
                omega: initial.omega[i],
            });
        }
    }

    let c = raw.controller;
    let defaults = QpSettings::default();
    let solver = QpSettings {
        eps_abs: c.solver.eps_abs.unwrap_or(defaults.eps_abs),
        eps_rel: c.solver.eps_rel.unwrap_or(defaults.eps_rel),
        max_iter: c.solver.max_iter.unwrap_or(defaults.max_iter),
        polish: c.solver.polish.unwrap_or(defaults.polish),
        ..defaults
    };
    let forecast = match c.forecast.as_deref() {
        None | Some("oracle") => ForecastProvider::Oracle,
        Some("constant-hold") => ForecastProvider::ConstantHold,
        Some(other) => {
            return Err(ScenarioError::Invalid(format!(
                "forecast must be \"oracle\" or \"constant-hold\", got \"{other}\""
            )))
        }
    };
    let condense = match (c.condense.as_deref(), c.condense_threshold) {
        (None | Some("auto"), threshold) => CondensePolicy::Auto {
            threshold: threshold.unwrap_or(crate::optimizer::CONDENSE_THRESHOLD),
        },
        (Some("always"), None) => CondensePolicy::Always,
        (Some("never"), None) => CondensePolicy::Never,
        (Some(other), _) => {
            return Err(ScenarioError::Invalid(format!(
                "condense must be \"auto\", \"always\" or \"never\" (threshold only with auto), got \"{other}\""
            )))
        }
    };
    let period = positive("controller.period", c.period.unwrap_or(0.001))?;
    let horizon = c.horizon.unwrap_or(200);
    if horizon == 0 {
        return Err(ScenarioError::Invalid(
            "controller.horizon must be at least 1".into(),
        ));
    }
    let recompute_interval = positive(
        "controller.recompute_interval",
        c.recompute_interval.unwrap_or(10.0 * period),
    )?;
    if recompute_interval < period * (1.0 - 1e-12) {
        return Err(ScenarioError::Invalid(
            "controller.recompute_interval must be at least controller.period".into(),
        ));
    }
    let log_step = positive(
        "run.log_step",
        raw.run.log_step.unwrap_or(recompute_interval),
    )?;
    let ratio = recompute_interval / log_step;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
        return Err(ScenarioError::Invalid(
            "controller.recompute_interval must be a multiple of run.log_step".into(),
        ));
    }
    let run = RunSettings {
        t_end: positive("run.t_end", raw.run.t_end.unwrap_or(40.0))?,
        log_step,
        substeps: raw.run.substeps.unwrap_or(10).max(1),
    };

    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        model,
        signal,
        controller: ControllerSettings {
            period,
            horizon,
            recompute_interval,
            forecast,
            warm_start: c.warm_start.unwrap_or(false),
            condense,
            solver,
            gains,
            weights,
        },
        regions,
        initial,
        run,
        output: raw.run.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"
format_version = 1
name = "toy"
initial = "equilibrium"

[[bus]]
id = 1
inertia = 1.0
damping = 1.0
injection = { kind = "constant", value = 0.5 }
thresholds = [-0.1, 0.1]
safe_bounds = [-0.2, 0.2]

[[bus]]
id = 2
inertia = 1.0
damping = 1.0
injection = { kind = "constant", value = -0.5 }

[[line]]
from = 1
to = 2
susceptance = 2.0
"#;

    #[test]
    fn parses_toy() {
        let s = Scenario::from_toml(TWO_BUS).unwrap();
        assert_eq!(s.model.n_buses(), 2);
        assert_eq!(s.initial.omega, vec![0.0, 0.0]);
        assert!((s.initial.f[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.run.log_step, 0.01);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = TWO_BUS.replace(
            "damping = 1.0\ninjection = { kind = \"constant\", value = -0.5 }",
            "damping = 1.0\ncolour = 3\ninjection = { kind = \"constant\", value = -0.5 }",
        );
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Parse { line, message, .. }) => {
                assert!(message.contains("colour"), "{message}");
                assert!(line >= 15 && line <= 22, "line {line}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_start_outside_bounds() {
        let text = TWO_BUS.replace(
            "initial = \"equilibrium\"",
            "[initial]\nf = [0.0]\nomega = [0.3, 0.0]",
        );
        // Tables must come after top-level keys; move the initial table to the end.
        let (head, rest) = text.split_once("[initial]").unwrap();
        let (table, tail) = rest.split_once("\n\n").unwrap();
        let text = format!("{head}{tail}\n[initial]{table}\n");
        assert!(matches!(
            Scenario::from_toml(&text),
            Err(ScenarioError::OutsideSafeSet { bus: 1, .. })
        ));
    }

    #[test]
    fn rejects_unknown_bus_in_line() {
        let text = TWO_BUS.replace("to = 2", "to = 7");
        assert!(matches!(
            Scenario::from_toml(&text),
            Err(ScenarioError::UnknownBus(7))
        ));
    }
}
