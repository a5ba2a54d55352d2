//! Convexified horizon problem: sign-constraint set from a reference
//! trajectory, QP assembly (sparse or condensed), and solution extraction.

mod assemble;
mod phi;

use thiserror::Error;

pub use assemble::{assemble_qp, CondensePolicy, Formulation, MpcQp, RowKey, CONDENSE_THRESHOLD};
pub use phi::{build_phi_cvx, phi_disc_member, Mode, SignConstraintSet};

use crate::dynamics::DynamicsError;
use crate::network::NetworkModel;
use crate::qp::{self, QpError, QpSettings, QpStatus, WarmStart};
use crate::reference::HorizonTrajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("horizon must have at least one step")]
    EmptyHorizon,
    #[error("sampling period must be positive, got {0}")]
    Period(f64),
    #[error("forecast has {got} columns, expected {expected}")]
    ForecastLength { expected: usize, got: usize },
    #[error("sign-constraint set does not match the controlled buses or horizon")]
    SignSet,
    #[error("bus {0}: weight must be strictly positive")]
    Weight(u32),
    #[error("bus {bus}: initial frequency {omega} contradicts the mode at step 0")]
    InitialMode { bus: u32, omega: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Solution of an assembled horizon problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    /// Prediction-model trajectory under the optimal inputs.
    pub trajectory: HorizonTrajectory,
    /// `sum c_i u_i(k)^2` at the optimal inputs.
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    /// Raw decision vector and multipliers, for warm starts.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl QpSolution {
    /// First input column `u*(0)`.
    pub fn first_input(&self) -> &[f64] {
        &self.trajectory.inputs[0]
    }
}

pub fn solve_mpc(
    model: &NetworkModel,
    mpc: &MpcQp,
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> Result<QpSolution, OptimizerError> {
    // Without a warm start, begin at the zero-input rollout so that the
    // sparse layout starts on its dynamics rows.
    let free_response;
    let warm = match warm {
        Some(w) => w,
        None => {
            let zeros = vec![vec![0.0; model.n_buses()]; mpc.horizon()];
            let traj = HorizonTrajectory::rollout(model, &mpc.x0, &mpc.forecast, zeros, mpc.period);
            free_response = WarmStart {
                x: mpc.encode(&traj),
                y: vec![0.0; mpc.problem.n_rows()],
            };
            &free_response
        }
    };
    let result = qp::solve(&mpc.problem, settings, Some(warm))?;
    let trajectory = mpc.trajectory(model, &result.x);
    let objective = trajectory.objective(&mpc.weights);
    Ok(QpSolution {
        trajectory,
        objective,
        status: result.status,
        iterations: result.iterations,
        primal_residual: result.primal_residual,
        dual_residual: result.dual_residual,
        polished: result.polished,
        x: result.x,
        y: result.y,
    })
}
