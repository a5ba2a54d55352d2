//! Linearized swing dynamics: the continuous plant, the explicit-Euler
//! prediction model, and the open-loop equilibrium.
//!
//! ```text
//! f'      = Y_b D omega
//! M omega' = -E omega - D^T f + p + u
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::NetworkModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input {value} at bus {bus} which has no sub-controller")]
    InadmissibleInput { bus: u32, value: f64 },
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("Laplacian solve failed beyond the constant kernel (network disconnected?)")]
    Singular,
}

pub(crate) fn check_len(
    what: &'static str,
    v: &[f64],
    expected: usize,
) -> Result<(), DynamicsError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(DynamicsError::Dimension {
            what,
            expected,
            got: v.len(),
        })
    }
}

/// Line flows `f` (one per line) and frequency deviations `omega` (one per bus).
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub f: Vec<f64>,
    pub omega: Vec<f64>,
}

impl State {
    pub fn zeros(model: &NetworkModel) -> Self {
        Self {
            f: vec![0.0; model.n_lines()],
            omega: vec![0.0; model.n_buses()],
        }
    }

    pub fn check(&self, model: &NetworkModel) -> Result<(), DynamicsError> {
        check_len("f", &self.f, model.n_lines())?;
        check_len("omega", &self.omega, model.n_buses())
    }

    fn axpy(&self, a: f64, d: &State) -> State {
        State {
            f: self.f.iter().zip(&d.f).map(|(x, y)| x + a * y).collect(),
            omega: self
                .omega
                .iter()
                .zip(&d.omega)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    /// Max-norm distance between two states.
    pub fn distance(&self, other: &State) -> f64 {
        self.f
            .iter()
            .zip(&other.f)
            .chain(self.omega.iter().zip(&other.omega))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rejects inputs that are nonzero at buses without a sub-controller.
pub fn check_admissible(model: &NetworkModel, u: &[f64]) -> Result<(), DynamicsError> {
    check_len("u", u, model.n_buses())?;
    for (bus, &value) in model.buses().iter().zip(u) {
        if value != 0.0 && !bus.is_controlled() {
            return Err(DynamicsError::InadmissibleInput {
                bus: bus.label,
                value,
            });
        }
    }
    Ok(())
}

fn derivative(model: &NetworkModel, x: &State, drive: &[f64]) -> State {
    let df = model
        .d_mul(&x.omega)
        .into_iter()
        .zip(model.susceptance())
        .map(|(d, b)| b * d)
        .collect();
    let flow_out = model.dt_mul(&x.f);
    let domega = model
        .buses()
        .iter()
        .enumerate()
        .map(|(i, bus)| (-bus.damping * x.omega[i] - flow_out[i] + drive[i]) / bus.inertia)
        .collect();
    State {
        f: df,
        omega: domega,
    }
}

/// One classical Runge-Kutta step of length `dt` with `p` and `u` held constant.
pub fn plant_step(
    model: &NetworkModel,
    state: &State,
    p: &[f64],
    u: &[f64],
    dt: f64,
) -> Result<State, DynamicsError> {
    state.check(model)?;
    check_len("p", p, model.n_buses())?;
    check_admissible(model, u)?;
    if !(dt > 0.0) {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    let drive: Vec<f64> = p.iter().zip(u).map(|(a, b)| a + b).collect();
    Ok(rk4(model, state, &drive, dt))
}

pub(crate) fn rk4(model: &NetworkModel, x: &State, drive: &[f64], h: f64) -> State {
    let k1 = derivative(model, x, drive);
    let k2 = derivative(model, &x.axpy(h / 2.0, &k1), drive);
    let k3 = derivative(model, &x.axpy(h / 2.0, &k2), drive);
    let k4 = derivative(model, &x.axpy(h, &k3), drive);
    let combine = |a: &[f64], k: [&[f64]; 4]| -> Vec<f64> {
        (0..a.len())
            .map(|i| a[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
            .collect()
    };
    State {
        f: combine(&x.f, [&k1.f, &k2.f, &k3.f, &k4.f]),
        omega: combine(&x.omega, [&k1.omega, &k2.omega, &k3.omega, &k4.omega]),
    }
}

/// Integrates the plant over `duration` with `substeps` RK4 steps, inputs held.
pub fn plant_advance(
    model: &NetworkModel,
    state: &State,
    p: &[f64],
    u: &[f64],
    duration: f64,
    substeps: usize,
) -> Result<State, DynamicsError> {
    let h = duration / substeps.max(1) as f64;
    let mut x = plant_step(model, state, p, u, h)?;
    let drive: Vec<f64> = p.iter().zip(u).map(|(a, b)| a + b).collect();
    for _ in 1..substeps {
        x = rk4(model, &x, &drive, h);
    }
    Ok(x)
}

/// One explicit-Euler step of the prediction model with sampling period `period`.
pub fn predict_step(
    model: &NetworkModel,
    f: &[f64],
    omega: &[f64],
    p: &[f64],
    u: &[f64],
    period: f64,
) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    check_len("f", f, model.n_lines())?;
    check_len("omega", omega, model.n_buses())?;
    check_len("p", p, model.n_buses())?;
    check_len("u", u, model.n_buses())?;
    if !(period > 0.0) {
        return Err(DynamicsError::NonPositiveStep(period));
    }
    Ok(euler_step(model, f, omega, p, u, period))
}

pub(crate) fn euler_step(
    model: &NetworkModel,
    f: &[f64],
    omega: &[f64],
    p: &[f64],
    u: &[f64],
    period: f64,
) -> (Vec<f64>, Vec<f64>) {
    let next_f = model
        .lines()
        .iter()
        .zip(f)
        .map(|(l, fk)| fk + period * l.susceptance * (omega[l.from] - omega[l.to]))
        .collect();
    let flow_out = model.dt_mul(f);
    let next_omega = model
        .buses()
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            let rhs = -bus.damping * omega[i] - flow_out[i] + p[i] + u[i];
            omega[i] + period * rhs / bus.inertia
        })
        .collect();
    (next_f, next_omega)
}

/// Open-loop equilibrium `(f_inf, omega_inf * 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub f: Vec<f64>,
    pub omega: f64,
}

impl Equilibrium {
    pub fn state(&self, model: &NetworkModel) -> State {
        State {
            f: self.f.clone(),
            omega: vec![self.omega; model.n_buses()],
        }
    }
}

/// Equilibrium reached from flows `f0` under constant injection `p_star`.
///
/// The synchronized frequency is `sum(p*) / sum(E)`; the flows are
/// `f0 + Y_b D theta` with `L theta = p* - E omega_inf - D^T f0`. The right-hand
/// side is projected off the constant kernel of `L` and the system is solved on
/// the complement via `L + 11^T / n`.
pub fn compute_equilibrium(
    model: &NetworkModel,
    p_star: &[f64],
    f0: &[f64],
) -> Result<Equilibrium, DynamicsError> {
    let n = model.n_buses();
    check_len("p", p_star, n)?;
    check_len("f0", f0, model.n_lines())?;
    let total_damping: f64 = model.damping().sum();
    let omega_inf = p_star.iter().sum::<f64>() / total_damping;
    let flow_out = model.dt_mul(f0);
    let mut rhs: Vec<f64> = model
        .damping()
        .enumerate()
        .map(|(i, e)| p_star[i] - e * omega_inf - flow_out[i])
        .collect();
    let mean = rhs.iter().sum::<f64>() / n as f64;
    rhs.iter_mut().for_each(|r| *r -= mean);

    let scale = 1.0 / n as f64;
    let lap = model.laplacian() + DMatrix::from_element(n, n, scale);
    let chol = lap.cholesky().ok_or(DynamicsError::Singular)?;
    let theta = chol.solve(&DVector::from_vec(rhs.clone()));
    let residual = (&model.laplacian() * &theta - DVector::from_vec(rhs)).amax();
    if !residual.is_finite() || residual > 1e-8 * (1.0 + theta.amax()) {
        return Err(DynamicsError::Singular);
    }
    let d_theta = model.d_mul(theta.as_slice());
    let f = f0
        .iter()
        .zip(d_theta)
        .zip(model.susceptance())
        .map(|((f0k, dk), b)| f0k + b * dk)
        .collect();
    Ok(Equilibrium {
        f,
        omega: omega_inf,
    })
}

/// Net power flowing into `bus` from its lines, `-(D^T f)_bus`.
pub fn aggregate_injection(model: &NetworkModel, f: &[f64], bus: usize) -> f64 {
    model.lines().iter().zip(f).fold(0.0, |q, (l, fk)| {
        if l.to == bus {
            q + fk
        } else if l.from == bus {
            q - fk
        } else {
            q
        }
    })
}
