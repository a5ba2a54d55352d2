use crate::network::NetworkModel;
use crate::reference::HorizonTrajectory;

/// Sign/dead-zone mode of one controlled bus at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// `omega >= thr_hi` and `u <= 0`.
    Upper,
    /// `omega <= thr_lo` and `u >= 0`.
    Lower,
    /// `u = 0`.
    Interior,
}

impl Mode {
    /// Mode selected by a frequency value; ties go to the saturated side.
    pub fn classify(omega: f64, thr_lo: f64, thr_hi: f64) -> Self {
        if omega >= thr_hi {
            Mode::Upper
        } else if omega <= thr_lo {
            Mode::Lower
        } else {
            Mode::Interior
        }
    }

    /// Admissible interval for the input.
    pub fn input_interval(self) -> (f64, f64) {
        match self {
            Mode::Upper => (f64::NEG_INFINITY, 0.0),
            Mode::Lower => (0.0, f64::INFINITY),
            Mode::Interior => (0.0, 0.0),
        }
    }

    /// Admissible interval for the frequency at the same step.
    pub fn omega_interval(self, thr_lo: f64, thr_hi: f64) -> (f64, f64) {
        match self {
            Mode::Upper => (thr_hi, f64::INFINITY),
            Mode::Lower => (f64::NEG_INFINITY, thr_lo),
            Mode::Interior => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Projects an input onto [`Mode::input_interval`].
    pub fn clamp_input(self, u: f64) -> f64 {
        match self {
            Mode::Upper => u.min(0.0),
            Mode::Lower => u.max(0.0),
            Mode::Interior => 0.0,
        }
    }
}

/// Convex inner approximation of the sign conditions: one [`Mode`] per
/// controlled bus and step `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignConstraintSet {
    /// Controlled buses, ascending model indices.
    pub buses: Vec<usize>,
    /// `modes[c][k]` for `buses[c]` at step `k`.
    pub modes: Vec<Vec<Mode>>,
}

impl SignConstraintSet {
    pub fn horizon(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    pub fn mode(&self, slot: usize, k: usize) -> Mode {
        self.modes[slot][k]
    }

    pub fn all_interior(&self) -> bool {
        self.modes.iter().flatten().all(|&m| m == Mode::Interior)
    }

    /// Membership of `(omega, inputs)` in the set (columns as in
    /// [`HorizonTrajectory`]), with absolute slack `tol` on each inequality.
    pub fn contains(
        &self,
        model: &NetworkModel,
        omega: &[Vec<f64>],
        inputs: &[Vec<f64>],
        tol: f64,
    ) -> bool {
        self.buses.iter().enumerate().all(|(slot, &i)| {
            let thr = model.buses()[i].thresholds.expect("controlled");
            (0..self.horizon()).all(|k| {
                let mode = self.modes[slot][k];
                let (ulo, uhi) = mode.input_interval();
                let (wlo, whi) = mode.omega_interval(thr.lower, thr.upper);
                let (u, w) = (inputs[k][i], omega[k][i]);
                u >= ulo - tol && u <= uhi + tol && w >= wlo - tol && w <= whi + tol
            })
        })
    }
}

/// Reads the mode at each controlled bus and step off the reference frequencies.
pub fn build_phi_cvx(model: &NetworkModel, reference: &HorizonTrajectory) -> SignConstraintSet {
    let buses = model.controlled();
    let modes = buses
        .iter()
        .map(|&i| {
            let thr = model.buses()[i].thresholds.expect("controlled");
            (0..reference.horizon())
                .map(|k| Mode::classify(reference.omega[k][i], thr.lower, thr.upper))
                .collect()
        })
        .collect();
    SignConstraintSet { buses, modes }
}

/// Whether `(omega, inputs)` satisfies the nonconvex sign conditions at every
/// controlled bus and step `k < inputs.len()`: `omega * u <= 0` outside the
/// open threshold band and `u = 0` inside it.
pub fn phi_disc_member(model: &NetworkModel, omega: &[Vec<f64>], inputs: &[Vec<f64>]) -> bool {
    model.controlled().into_iter().all(|i| {
        let thr = model.buses()[i].thresholds.expect("controlled");
        inputs.iter().zip(omega).all(|(u, w)| {
            let (u, w) = (u[i], w[i]);
            if thr.contains_open(w) {
                u == 0.0
            } else {
                w * u <= 0.0
            }
        })
    })
}
