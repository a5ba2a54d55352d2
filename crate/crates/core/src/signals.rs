//! Power injection signals that settle in finite time, and the forecasts fed
//! to the receding-horizon controllers.

use std::f64::consts::PI;

/// Time profile of the injection at a single bus.
#[derive(Debug, Clone, PartialEq)]
pub enum BusProfile {
    Constant(f64),
    /// `(1 + delta(t)) * base` with `delta(t) = amplitude * sin(pi (t - start) / (end - start))`
    /// strictly inside `(start, end)` and zero elsewhere.
    Sinusoidal {
        base: f64,
        amplitude: f64,
        start: f64,
        end: f64,
    },
    /// Piecewise constant: `initial` before the first breakpoint, then
    /// `value_j` on `[time_j, time_{j+1})`. Breakpoints are sorted by time.
    Piecewise {
        initial: f64,
        breakpoints: Vec<(f64, f64)>,
    },
}

impl BusProfile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            BusProfile::Constant(v) => *v,
            BusProfile::Sinusoidal {
                base,
                amplitude,
                start,
                end,
            } => (1.0 + sinusoidal_delta(t, *amplitude, *start, *end)) * base,
            BusProfile::Piecewise {
                initial,
                breakpoints,
            } => breakpoints
                .iter()
                .take_while(|(bt, _)| *bt <= t)
                .last()
                .map_or(*initial, |(_, v)| *v),
        }
    }

    /// Earliest time after which the profile is constant.
    pub fn settling_time(&self) -> f64 {
        match self {
            BusProfile::Constant(_) => 0.0,
            BusProfile::Sinusoidal { end, .. } => *end,
            BusProfile::Piecewise { breakpoints, .. } => {
                breakpoints.last().map_or(0.0, |(t, _)| t.max(0.0))
            }
        }
    }

    pub fn settled_value(&self) -> f64 {
        self.at(self.settling_time())
    }
}

/// Relative disturbance `delta(t)`; zero outside the open window `(start, end)`.
pub fn sinusoidal_delta(t: f64, amplitude: f64, start: f64, end: f64) -> f64 {
    if t <= start || t >= end {
        0.0
    } else {
        amplitude * (PI * (t - start) / (end - start)).sin()
    }
}

/// Injection applied to the 39-bus test case: buses 1..=29 (the first 29
/// entries) follow `(1 + delta(t)) p0` with a 0.3 amplitude half-sine on
/// `(0.5, 15.5)`; the generator buses 30..=39 stay at `p0`.
pub fn ieee39_disturbance(p0: &[f64], t: f64) -> Vec<f64> {
    let delta = sinusoidal_delta(t, 0.3, 0.5, 15.5);
    p0.iter()
        .enumerate()
        .map(|(i, &p)| if i < 29 { (1.0 + delta) * p } else { p })
        .collect()
}

/// Per-bus injection signal `t -> p(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSignal {
    pub profiles: Vec<BusProfile>,
}

impl InjectionSignal {
    pub fn constant(p: &[f64]) -> Self {
        Self {
            profiles: p.iter().map(|&v| BusProfile::Constant(v)).collect(),
        }
    }

    /// The 39-bus disturbance as a signal over base injections `p0`.
    pub fn ieee39(p0: &[f64]) -> Self {
        Self {
            profiles: p0
                .iter()
                .enumerate()
                .map(|(i, &base)| {
                    if i < 29 {
                        BusProfile::Sinusoidal {
                            base,
                            amplitude: 0.3,
                            start: 0.5,
                            end: 15.5,
                        }
                    } else {
                        BusProfile::Constant(base)
                    }
                })
                .collect(),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.profiles.len()
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        self.profiles.iter().map(|p| p.at(t)).collect()
    }

    pub fn settling_time(&self) -> f64 {
        self.profiles
            .iter()
            .map(BusProfile::settling_time)
            .fold(0.0, f64::max)
    }

    /// Constant value `p*` reached after [`InjectionSignal::settling_time`].
    pub fn settled(&self) -> Vec<f64> {
        self.at(self.settling_time())
    }
}

/// Discretized injection forecast over `[anchor, anchor + N T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub anchor: f64,
    pub period: f64,
    /// `N` columns, each one value per bus.
    pub columns: Vec<Vec<f64>>,
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        self.columns.len()
    }

    pub fn n_buses(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Rows for the given buses, in order.
    pub fn restrict(&self, buses: &[usize]) -> Forecast {
        Forecast {
            anchor: self.anchor,
            period: self.period,
            columns: self
                .columns
                .iter()
                .map(|c| buses.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Adds a per-bus constant to every column.
    pub fn add_constant(&mut self, offset: &[f64]) {
        for col in &mut self.columns {
            col.iter_mut().zip(offset).for_each(|(c, o)| *c += o);
        }
    }
}

/// How the controller predicts injections over its horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForecastProvider {
    /// Measure `p(t)` and hold it over the horizon.
    ConstantHold,
    /// Sample the true signal at `t + kT`.
    #[default]
    Oracle,
}

impl ForecastProvider {
    pub fn forecast(
        self,
        signal: &InjectionSignal,
        t: f64,
        n_steps: usize,
        period: f64,
    ) -> Forecast {
        match self {
            ForecastProvider::ConstantHold => constant_hold_forecast(signal, t, n_steps, period),
            ForecastProvider::Oracle => oracle_forecast(signal, t, n_steps, period),
        }
    }
}

pub fn constant_hold_forecast(
    signal: &InjectionSignal,
    t: f64,
    n_steps: usize,
    period: f64,
) -> Forecast {
    let now = signal.at(t);
    Forecast {
        anchor: t,
        period,
        columns: vec![now; n_steps],
    }
}

pub fn oracle_forecast(signal: &InjectionSignal, t: f64, n_steps: usize, period: f64) -> Forecast {
    Forecast {
        anchor: t,
        period,
        columns: (0..n_steps)
            .map(|k| signal.at(t + k as f64 * period))
            .collect(),
    }
}
