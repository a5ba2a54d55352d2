//! Reference trajectory: roll the prediction model forward under the
//! threshold-barrier feedback and certify the result against the discrete
//! problem's constraints.

use thiserror::Error;

use crate::dynamics::{aggregate_injection, check_len, euler_step, DynamicsError, State};
use crate::network::{FreqBand, NetworkModel};
use crate::signals::Forecast;

/// Absolute tolerance on every residual checked by the certificate.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Distance to a threshold below which the barrier fraction is taken as infinite.
pub const THRESHOLD_GUARD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("horizon must have at least one step")]
    EmptyHorizon,
    #[error("forecast has {got} columns, expected {expected}")]
    ForecastLength { expected: usize, got: usize },
    #[error("gain vector has length {got}, expected {expected}")]
    GainLength { expected: usize, got: usize },
    #[error("bus {bus}: gains must be strictly positive")]
    Gain { bus: u32 },
    #[error("initial frequency {omega} at bus {bus} is outside its safe bounds")]
    OutsideSafeSet { bus: u32, omega: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Barrier gains `(gamma_upper, gamma_lower)` for one controlled bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefGains {
    pub upper: f64,
    pub lower: f64,
}

impl RefGains {
    pub fn new(upper: f64, lower: f64) -> Self {
        Self { upper, lower }
    }
}

impl Default for RefGains {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Discrete trajectories over a horizon of `N` steps, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTrajectory {
    /// `N + 1` flow columns.
    pub flows: Vec<Vec<f64>>,
    /// `N + 1` frequency columns.
    pub omega: Vec<Vec<f64>>,
    /// `N` input columns (zero at uncontrolled buses).
    pub inputs: Vec<Vec<f64>>,
    /// `N` forecast columns.
    pub forecast: Vec<Vec<f64>>,
}

impl HorizonTrajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Quadratic effort `sum_i sum_k c_i u_i(k)^2`.
    pub fn objective(&self, weights: &[f64]) -> f64 {
        self.inputs
            .iter()
            .map(|col| col.iter().zip(weights).map(|(u, c)| c * u * u).sum::<f64>())
            .sum()
    }

    /// Rolls the prediction model forward from `x0` with the given inputs.
    pub fn rollout(
        model: &NetworkModel,
        x0: &State,
        forecast: &[Vec<f64>],
        inputs: Vec<Vec<f64>>,
        period: f64,
    ) -> Self {
        let mut flows = Vec::with_capacity(inputs.len() + 1);
        let mut omega = Vec::with_capacity(inputs.len() + 1);
        flows.push(x0.f.clone());
        omega.push(x0.omega.clone());
        for (k, u) in inputs.iter().enumerate() {
            let (f, w) = euler_step(model, &flows[k], &omega[k], &forecast[k], u, period);
            flows.push(f);
            omega.push(w);
        }
        Self {
            flows,
            omega,
            inputs,
            forecast: forecast.to_vec(),
        }
    }

    /// Largest residual of the Euler update across the horizon, in the
    /// `M omega(k+1) = M omega(k) + T (...)` form.
    pub fn dynamics_residual(&self, model: &NetworkModel, period: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.horizon() {
            let (f, w, fn_, wn) = (
                &self.flows[k],
                &self.omega[k],
                &self.flows[k + 1],
                &self.omega[k + 1],
            );
            for (j, line) in model.lines().iter().enumerate() {
                let r = fn_[j] - f[j] - period * line.susceptance * (w[line.from] - w[line.to]);
                worst = worst.max(r.abs());
            }
            let flow_out = model.dt_mul(f);
            for (i, bus) in model.buses().iter().enumerate() {
                let rhs =
                    -bus.damping * w[i] - flow_out[i] + self.forecast[k][i] + self.inputs[k][i];
                let r = bus.inertia * wn[i] - bus.inertia * w[i] - period * rhs;
                worst = worst.max(r.abs());
            }
        }
        worst
    }

    /// Shifts the trajectory `steps` columns forward, padding with zero inputs
    /// propagated through the model.
    pub fn shifted(&self, model: &NetworkModel, steps: usize, period: f64) -> Self {
        let n = self.horizon();
        let steps = steps.min(n);
        let x0 = State {
            f: self.flows[steps].clone(),
            omega: self.omega[steps].clone(),
        };
        let mut inputs: Vec<Vec<f64>> = self.inputs[steps..].to_vec();
        inputs.resize(n, vec![0.0; model.n_buses()]);
        let mut forecast: Vec<Vec<f64>> = self.forecast[steps..].to_vec();
        let last = self.forecast.last().cloned().unwrap_or_default();
        forecast.resize(n, last);
        Self::rollout(model, &x0, &forecast, inputs, period)
    }
}

/// Residual-based validity check of a reference trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub dynamics_residual: f64,
    /// Worst violation of the safe bounds at steps `1..=N`.
    pub bound_violation: f64,
    /// Whether inputs vanish at uncontrolled buses.
    pub admissible: bool,
    /// Whether the sign/dead-zone conditions hold at every step.
    pub stability_sets: bool,
}

impl Certificate {
    pub fn is_valid(&self) -> bool {
        self.dynamics_residual <= CERTIFICATE_TOL
            && self.bound_violation <= CERTIFICATE_TOL
            && self.admissible
            && self.stability_sets
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub trajectory: HorizonTrajectory,
    pub certificate: Certificate,
}

/// Reference input at one bus for one step.
///
/// Returns zero for controlled buses without safe bounds. At a threshold the
/// saturated branch applies; within [`THRESHOLD_GUARD`] of it the barrier term
/// is infinite and the output is zero.
pub fn ref_control(
    omega: f64,
    drift: f64,
    gains: RefGains,
    thresholds: FreqBand,
    bounds: Option<FreqBand>,
) -> f64 {
    let Some(bounds) = bounds else {
        return 0.0;
    };
    if omega >= thresholds.upper {
        let gap = omega - thresholds.upper;
        if gap < THRESHOLD_GUARD {
            return 0.0;
        }
        (gains.upper * (bounds.upper - omega) / gap - drift).min(0.0)
    } else if omega <= thresholds.lower {
        let gap = thresholds.lower - omega;
        if gap < THRESHOLD_GUARD {
            return 0.0;
        }
        (gains.lower * (bounds.lower - omega) / gap - drift).max(0.0)
    } else {
        0.0
    }
}

/// Uncontrolled net power at `bus`: inflow plus forecast injection minus damping.
pub fn drift_term(model: &NetworkModel, f: &[f64], omega: &[f64], p: &[f64], bus: usize) -> f64 {
    aggregate_injection(model, f, bus) + p[bus] - model.buses()[bus].damping * omega[bus]
}

/// Rolls the Euler model forward under [`ref_control`] and certifies the result.
///
/// `gains` is indexed by bus and read only at controlled buses.
pub fn generate_reference(
    model: &NetworkModel,
    x0: &State,
    forecast: &Forecast,
    gains: &[RefGains],
    n_steps: usize,
    period: f64,
) -> Result<Reference, ReferenceError> {
    for i in model.constrained() {
        let bounds = model.buses()[i].safe_bounds.expect("constrained");
        if !bounds.contains_closed(x0.omega[i]) {
            return Err(ReferenceError::OutsideSafeSet {
                bus: model.label(i),
                omega: x0.omega[i],
            });
        }
    }
    rollout_reference(model, x0, forecast, gains, n_steps, period)
}

/// [`generate_reference`] without the initial safe-set precondition.
pub fn rollout_reference(
    model: &NetworkModel,
    x0: &State,
    forecast: &Forecast,
    gains: &[RefGains],
    n_steps: usize,
    period: f64,
) -> Result<Reference, ReferenceError> {
    if n_steps == 0 {
        return Err(ReferenceError::EmptyHorizon);
    }
    if !(period > 0.0) {
        return Err(DynamicsError::NonPositiveStep(period).into());
    }
    x0.check(model)?;
    if forecast.horizon() < n_steps {
        return Err(ReferenceError::ForecastLength {
            expected: n_steps,
            got: forecast.horizon(),
        });
    }
    if gains.len() != model.n_buses() {
        return Err(ReferenceError::GainLength {
            expected: model.n_buses(),
            got: gains.len(),
        });
    }
    for &i in &model.controlled() {
        let g = gains[i];
        if !(g.upper > 0.0 && g.lower > 0.0) {
            return Err(ReferenceError::Gain {
                bus: model.label(i),
            });
        }
    }
    for col in &forecast.columns[..n_steps] {
        check_len("forecast column", col, model.n_buses())?;
    }

    let controlled = model.controlled();
    let n = model.n_buses();
    let mut flows = vec![x0.f.clone()];
    let mut omega = vec![x0.omega.clone()];
    let mut inputs = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let p = &forecast.columns[k];
        let mut u = vec![0.0; n];
        for &i in &controlled {
            let bus = &model.buses()[i];
            let drift = drift_term(model, &flows[k], &omega[k], p, i);
            u[i] = ref_control(
                omega[k][i],
                drift,
                gains[i],
                bus.thresholds.expect("controlled"),
                bus.safe_bounds,
            );
        }
        let (f, w) = euler_step(model, &flows[k], &omega[k], p, &u, period);
        flows.push(f);
        omega.push(w);
        inputs.push(u);
    }
    let trajectory = HorizonTrajectory {
        flows,
        omega,
        inputs,
        forecast: forecast.columns[..n_steps].to_vec(),
    };
    let certificate = certify(model, &trajectory, period);
    Ok(Reference {
        trajectory,
        certificate,
    })
}

/// Checks a trajectory against the discrete problem's constraints.
pub fn certify(model: &NetworkModel, traj: &HorizonTrajectory, period: f64) -> Certificate {
    let dynamics_residual = traj.dynamics_residual(model, period);
    let mut bound_violation: f64 = 0.0;
    for i in model.constrained() {
        let b = model.buses()[i].safe_bounds.expect("constrained");
        for col in &traj.omega[1..] {
            bound_violation = bound_violation.max(b.lower - col[i]).max(col[i] - b.upper);
        }
    }
    let admissible = traj.inputs.iter().all(|u| {
        model
            .buses()
            .iter()
            .zip(u)
            .all(|(bus, &v)| bus.is_controlled() || v == 0.0)
    });
    let stability_sets = crate::optimizer::phi_disc_member(model, &traj.omega, &traj.inputs);
    Certificate {
        dynamics_residual,
        bound_violation,
        admissible,
        stability_sets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Bus, Line};
    use crate::signals::{constant_hold_forecast, InjectionSignal};

    const THR: FreqBand = FreqBand {
        lower: -0.1,
        upper: 0.1,
    };
    const BOUNDS: FreqBand = FreqBand {
        lower: -0.2,
        upper: 0.2,
    };

    #[test]
    fn ref_control_branches() {
        let g = RefGains::default();
        assert_eq!(ref_control(0.05, 3.0, g, THR, Some(BOUNDS)), 0.0);
        assert!((ref_control(0.15, 2.0, g, THR, Some(BOUNDS)) + 1.0).abs() < 1e-12);
        assert_eq!(ref_control(0.15, 0.0, g, THR, Some(BOUNDS)), 0.0);
        // mirror image on the lower side
        assert!((ref_control(-0.15, -2.0, g, THR, Some(BOUNDS)) - 1.0).abs() < 1e-12);
        // controlled but unconstrained
        assert_eq!(ref_control(-0.15, -2.0, g, THR, None), 0.0);
        // exactly at a threshold: saturated branch, infinite barrier
        assert_eq!(ref_control(0.1, 5.0, g, THR, Some(BOUNDS)), 0.0);
        assert_eq!(ref_control(-0.1, -5.0, g, THR, Some(BOUNDS)), 0.0);
    }

    #[test]
    fn drift_term_two_bus() {
        let m = NetworkModel::new(
            vec![Bus::plain(1, 1.0, 1.0), Bus::plain(2, 1.0, 1.0)],
            vec![Line::new(0, 1, 1.0)],
        )
        .unwrap();
        let v = drift_term(&m, &[0.4], &[0.0, 0.2], &[0.0, 0.1], 1);
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(drift_term(&m, &[0.0], &[0.0, 0.0], &[0.0, 0.0], 0), 0.0);
    }

    fn guarded_pair() -> NetworkModel {
        NetworkModel::new(
            vec![
                Bus::plain(1, 1.0, 1.0).controlled(THR).constrained(BOUNDS),
                Bus::plain(2, 0.5, 1.0),
            ],
            vec![Line::new(0, 1, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_reference_is_zero_and_certified() {
        let m = guarded_pair();
        let x0 = State::zeros(&m);
        let sig = InjectionSignal::constant(&[0.0, 0.0]);
        let fc = constant_hold_forecast(&sig, 0.0, 50, 0.001);
        let r = generate_reference(&m, &x0, &fc, &[RefGains::default(); 2], 50, 0.001).unwrap();
        assert!(r.certificate.is_valid());
        assert!(r.trajectory.inputs.iter().flatten().all(|&u| u == 0.0));
        assert_eq!(r.trajectory.objective(&[1.0, 1.0]), 0.0);
    }

    #[test]
    fn rejects_empty_horizon_and_outside_start() {
        let m = guarded_pair();
        let sig = InjectionSignal::constant(&[0.0, 0.0]);
        let fc = constant_hold_forecast(&sig, 0.0, 5, 0.001);
        let g = [RefGains::default(); 2];
        assert_eq!(
            generate_reference(&m, &State::zeros(&m), &fc, &g, 0, 0.001),
            Err(ReferenceError::EmptyHorizon)
        );
        let x0 = State {
            f: vec![0.0],
            omega: vec![-0.3, 0.0],
        };
        assert!(matches!(
            generate_reference(&m, &x0, &fc, &g, 5, 0.001),
            Err(ReferenceError::OutsideSafeSet { bus: 1, .. })
        ));
    }

    #[test]
    fn barrier_keeps_frequency_above_bound() {
        let m = guarded_pair();
        // strong deficit at the guarded bus, starting in the lower saturated band
        let x0 = State {
            f: vec![0.0],
            omega: vec![-0.15, -0.15],
        };
        let sig = InjectionSignal::constant(&[-3.0, -1.0]);
        let fc = constant_hold_forecast(&sig, 0.0, 400, 0.001);
        let r = generate_reference(&m, &x0, &fc, &[RefGains::default(); 2], 400, 0.001).unwrap();
        assert!(r.certificate.is_valid(), "{:?}", r.certificate);
        assert!(r.trajectory.inputs.iter().any(|u| u[0] > 0.0));
        for (k, u) in r.trajectory.inputs.iter().enumerate() {
            let w = r.trajectory.omega[k][0];
            if w <= THR.lower {
                assert!(u[0] >= 0.0);
            } else if w < THR.upper {
                assert_eq!(u[0], 0.0);
            }
            assert_eq!(u[1], 0.0);
        }
    }

    #[test]
    fn shifted_keeps_tail_inputs() {
        let m = guarded_pair();
        let x0 = State {
            f: vec![0.0],
            omega: vec![-0.15, -0.15],
        };
        let sig = InjectionSignal::constant(&[-3.0, -1.0]);
        let fc = constant_hold_forecast(&sig, 0.0, 20, 0.001);
        let r = generate_reference(&m, &x0, &fc, &[RefGains::default(); 2], 20, 0.001).unwrap();
        let s = r.trajectory.shifted(&m, 5, 0.001);
        assert_eq!(s.horizon(), 20);
        assert_eq!(s.inputs[0], r.trajectory.inputs[5]);
        assert_eq!(s.omega[0], r.trajectory.omega[5]);
        assert!(s.inputs[19].iter().all(|&u| u == 0.0));
        assert!(s.dynamics_residual(&m, 0.001) < 1e-12);
    }
}
