use std::collections::HashMap;

use crate::dynamics::{check_len, euler_step, State};
use crate::network::NetworkModel;
use crate::qp::{CsrMatrix, QpProblem, WarmStart};
use crate::reference::HorizonTrajectory;

use super::phi::SignConstraintSet;
use super::OptimizerError;

/// Default problem size `N (m + n)` above which the states are condensed out.
pub const CONDENSE_THRESHOLD: usize = 20_000;

/// Decision vector layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Flows, frequencies and inputs, with the dynamics as equality rows.
    Sparse,
    /// Inputs only; frequencies are affine in the inputs.
    Condensed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondensePolicy {
    Auto { threshold: usize },
    Always,
    Never,
}

impl Default for CondensePolicy {
    fn default() -> Self {
        CondensePolicy::Auto {
            threshold: CONDENSE_THRESHOLD,
        }
    }
}

impl CondensePolicy {
    pub fn select(self, model: &NetworkModel, n_steps: usize) -> Formulation {
        match self {
            CondensePolicy::Always => Formulation::Condensed,
            CondensePolicy::Never => Formulation::Sparse,
            CondensePolicy::Auto { threshold } => {
                if n_steps * (model.n_lines() + model.n_buses()) > threshold {
                    Formulation::Condensed
                } else {
                    Formulation::Sparse
                }
            }
        }
    }
}

/// Identifies a constraint row independently of the layout, so that duals can
/// be carried over between consecutive horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKey {
    /// Flow update producing `f_line(k)`.
    Flow { line: usize, k: usize },
    /// Swing update producing `omega_bus(k)`.
    Swing { bus: usize, k: usize },
    /// Bound and mode interval on `omega_bus(k)`.
    Omega { bus: usize, k: usize },
    /// Mode interval on the input of controlled slot `slot` at step `k`.
    Input { slot: usize, k: usize },
}

impl RowKey {
    fn advanced(self, shift: usize) -> Self {
        match self {
            RowKey::Flow { line, k } => RowKey::Flow { line, k: k + shift },
            RowKey::Swing { bus, k } => RowKey::Swing { bus, k: k + shift },
            RowKey::Omega { bus, k } => RowKey::Omega { bus, k: k + shift },
            RowKey::Input { slot, k } => RowKey::Input { slot, k: k + shift },
        }
    }
}

/// An assembled horizon problem together with what is needed to map decision
/// vectors back to trajectories.
#[derive(Debug, Clone)]
pub struct MpcQp {
    pub problem: QpProblem,
    pub formulation: Formulation,
    pub row_keys: Vec<RowKey>,
    pub phi: SignConstraintSet,
    pub x0: State,
    pub forecast: Vec<Vec<f64>>,
    /// Per-bus weights (read at controlled buses).
    pub weights: Vec<f64>,
    pub period: f64,
    n_lines: usize,
    n_buses: usize,
}

impl MpcQp {
    pub fn horizon(&self) -> usize {
        self.phi.horizon()
    }

    fn n_controlled(&self) -> usize {
        self.phi.buses.len()
    }

    fn input_offset(&self) -> usize {
        match self.formulation {
            Formulation::Sparse => self.horizon() * (self.n_lines + self.n_buses),
            Formulation::Condensed => 0,
        }
    }

    /// Input columns (all buses) read off a decision vector, projected onto
    /// each step's mode interval.
    pub fn inputs_from(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let nc = self.n_controlled();
        let off = self.input_offset();
        (0..self.horizon())
            .map(|k| {
                let mut col = vec![0.0; self.n_buses];
                for (slot, &i) in self.phi.buses.iter().enumerate() {
                    col[i] = self.phi.mode(slot, k).clamp_input(x[off + k * nc + slot]);
                }
                col
            })
            .collect()
    }

    /// Trajectory obtained by rolling the prediction model forward under the
    /// inputs of `x`.
    pub fn trajectory(&self, model: &NetworkModel, x: &[f64]) -> HorizonTrajectory {
        HorizonTrajectory::rollout(
            model,
            &self.x0,
            &self.forecast,
            self.inputs_from(x),
            self.period,
        )
    }

    /// Decision vector of a trajectory in this layout.
    pub fn encode(&self, traj: &HorizonTrajectory) -> Vec<f64> {
        let n_steps = self.horizon();
        let nc = self.n_controlled();
        let mut x = vec![0.0; self.problem.n_vars()];
        if self.formulation == Formulation::Sparse {
            let (m, n) = (self.n_lines, self.n_buses);
            for k in 1..=n_steps {
                x[(k - 1) * m..k * m].copy_from_slice(&traj.flows[k]);
                let w = n_steps * m + (k - 1) * n;
                x[w..w + n].copy_from_slice(&traj.omega[k]);
            }
        }
        let off = self.input_offset();
        for k in 0..n_steps {
            for (slot, &i) in self.phi.buses.iter().enumerate() {
                x[off + k * nc + slot] = traj.inputs[k][i];
            }
        }
        x
    }

    /// Warm start from the previous horizon's solution advanced by `shift`
    /// steps: the primal part replays the shifted inputs (zero-padded), duals
    /// are carried over row by row where the row still exists.
    pub fn shifted_warm_start(
        &self,
        model: &NetworkModel,
        previous: &MpcQp,
        previous_x: &[f64],
        previous_y: &[f64],
        shift: usize,
    ) -> Option<WarmStart> {
        if previous.horizon() != self.horizon() || previous.formulation != self.formulation {
            return None;
        }
        let traj = previous
            .trajectory(model, previous_x)
            .shifted(model, shift, self.period);
        let x = self.encode(&traj);
        let old: HashMap<RowKey, usize> = previous
            .row_keys
            .iter()
            .enumerate()
            .map(|(r, key)| (*key, r))
            .collect();
        let y = self
            .row_keys
            .iter()
            .map(|key| {
                old.get(&key.advanced(shift))
                    .map_or(0.0, |&r| previous_y[r])
            })
            .collect();
        Some(WarmStart { x, y })
    }
}

struct Rows {
    triplets: Vec<(usize, usize, f64)>,
    l: Vec<f64>,
    u: Vec<f64>,
    keys: Vec<RowKey>,
    /// Row scales for the solver; left empty to use its own equilibration.
    scale: Vec<f64>,
}

impl Rows {
    fn push(
        &mut self,
        entries: impl IntoIterator<Item = (usize, f64)>,
        lo: f64,
        hi: f64,
        key: RowKey,
    ) {
        let r = self.l.len();
        self.triplets
            .extend(entries.into_iter().map(|(c, v)| (r, c, v)));
        self.l.push(lo);
        self.u.push(hi);
        self.keys.push(key);
    }
}

/// Interval on `omega_i(k)` from the safe bounds (if constrained) and the
/// mode at step `k` (if controlled and `k < N`).
fn omega_interval(
    model: &NetworkModel,
    phi: &SignConstraintSet,
    slot_of: &[Option<usize>],
    i: usize,
    k: usize,
) -> (f64, f64) {
    let bus = &model.buses()[i];
    let (mut lo, mut hi) = bus
        .safe_bounds
        .map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b.lower, b.upper));
    if let (Some(slot), Some(thr)) = (slot_of[i], bus.thresholds) {
        if k < phi.horizon() {
            let (a, b) = phi.mode(slot, k).omega_interval(thr.lower, thr.upper);
            lo = lo.max(a);
            hi = hi.min(b);
        }
    }
    (lo, hi)
}

/// Frequency response to a unit input at each controlled bus, indexed by
/// `[slot][delay][bus]` for delays `0..=n_steps`.
fn impulse_responses(
    model: &NetworkModel,
    controlled: &[usize],
    n_steps: usize,
    period: f64,
) -> Vec<Vec<Vec<f64>>> {
    let (m, n) = (model.n_lines(), model.n_buses());
    let zeros_n = vec![0.0; n];
    controlled
        .iter()
        .map(|&c| {
            let mut unit = zeros_n.clone();
            unit[c] = 1.0;
            let mut f = vec![0.0; m];
            let mut w = zeros_n.clone();
            let mut out = vec![zeros_n.clone()];
            for d in 0..n_steps {
                let drive = if d == 0 { &unit } else { &zeros_n };
                let (nf, nw) = euler_step(model, &f, &w, &zeros_n, drive, period);
                f = nf;
                w = nw;
                out.push(w.clone());
            }
            out
        })
        .collect()
}

/// Below this fraction of the largest input sensitivity a frequency row is
/// treated as insensitive when choosing its scale.
const SENSITIVITY_FLOOR: f64 = 1e-3;

/// Builds the convexified horizon problem: minimize `sum c_i u_i(k)^2` subject
/// to the Euler prediction model from `x0`, the safe bounds at steps `1..=N`,
/// and the modes of `phi`. Inputs exist only at controlled buses.
pub fn assemble_qp(
    model: &NetworkModel,
    x0: &State,
    forecast: &[Vec<f64>],
    phi: &SignConstraintSet,
    weights: &[f64],
    period: f64,
    formulation: Formulation,
) -> Result<MpcQp, OptimizerError> {
    let n_steps = phi.horizon();
    let (m, n) = (model.n_lines(), model.n_buses());
    if n_steps == 0 {
        return Err(OptimizerError::EmptyHorizon);
    }
    if !(period > 0.0) {
        return Err(OptimizerError::Period(period));
    }
    x0.check(model)?;
    check_len("weights", weights, n)?;
    if forecast.len() < n_steps {
        return Err(OptimizerError::ForecastLength {
            expected: n_steps,
            got: forecast.len(),
        });
    }
    for col in &forecast[..n_steps] {
        check_len("forecast column", col, n)?;
    }
    let controlled = model.controlled();
    if phi.buses != controlled || phi.modes.iter().any(|m| m.len() != n_steps) {
        return Err(OptimizerError::SignSet);
    }
    for &i in &controlled {
        if !(weights[i] > 0.0) {
            return Err(OptimizerError::Weight(model.label(i)));
        }
    }
    let nc = controlled.len();
    let mut slot_of = vec![None; n];
    for (slot, &i) in controlled.iter().enumerate() {
        slot_of[i] = Some(slot);
        let thr = model.buses()[i].thresholds.expect("controlled");
        let (lo, hi) = phi.mode(slot, 0).omega_interval(thr.lower, thr.upper);
        if x0.omega[i] < lo || x0.omega[i] > hi {
            return Err(OptimizerError::InitialMode {
                bus: model.label(i),
                omega: x0.omega[i],
            });
        }
    }

    // Rows on frequencies: every constrained or controlled bus, steps 1..=N.
    let omega_buses: Vec<usize> = (0..n)
        .filter(|&i| model.buses()[i].is_freq_constrained() || slot_of[i].is_some())
        .collect();

    let mut rows = Rows {
        triplets: Vec::new(),
        l: Vec::new(),
        u: Vec::new(),
        keys: Vec::new(),
        scale: Vec::new(),
    };
    let n_vars;
    let u_off;
    match formulation {
        Formulation::Sparse => {
            n_vars = n_steps * (m + n + nc);
            u_off = n_steps * (m + n);
            let fi = |k: usize, j: usize| (k - 1) * m + j;
            let wi = |k: usize, i: usize| n_steps * m + (k - 1) * n + i;
            let ui = |k: usize, slot: usize| u_off + k * nc + slot;
            let lines = model.lines();
            let buses = model.buses();
            let flow0 = model.dt_mul(&x0.f);
            for k in 0..n_steps {
                for (j, line) in lines.iter().enumerate() {
                    let tb = period * line.susceptance;
                    let mut entries = vec![(fi(k + 1, j), 1.0)];
                    let rhs = if k == 0 {
                        x0.f[j] + tb * (x0.omega[line.from] - x0.omega[line.to])
                    } else {
                        entries.push((fi(k, j), -1.0));
                        entries.push((wi(k, line.from), -tb));
                        entries.push((wi(k, line.to), tb));
                        0.0
                    };
                    rows.push(entries, rhs, rhs, RowKey::Flow { line: j, k: k + 1 });
                }
                for (i, bus) in buses.iter().enumerate() {
                    let mut entries = vec![(wi(k + 1, i), bus.inertia)];
                    let mut rhs = period * forecast[k][i];
                    if k == 0 {
                        rhs +=
                            (bus.inertia - period * bus.damping) * x0.omega[i] - period * flow0[i];
                    } else {
                        entries.push((wi(k, i), period * bus.damping - bus.inertia));
                        for (j, line) in lines.iter().enumerate() {
                            if line.from == i {
                                entries.push((fi(k, j), period));
                            } else if line.to == i {
                                entries.push((fi(k, j), -period));
                            }
                        }
                    }
                    if let Some(slot) = slot_of[i] {
                        entries.push((ui(k, slot), -period));
                    }
                    rows.push(entries, rhs, rhs, RowKey::Swing { bus: i, k: k + 1 });
                }
            }
            // Frequency rows are scaled by how strongly the inputs can move
            // them, which is what the condensed rows look like to the solver.
            let impulse = impulse_responses(model, &controlled, n_steps, period);
            let mut reach = vec![vec![0.0f64; n]; n_steps + 1];
            for k in 1..=n_steps {
                for i in 0..n {
                    let now = impulse.iter().fold(0.0, |a: f64, r| a.max(r[k][i].abs()));
                    reach[k][i] = reach[k - 1][i].max(now);
                }
            }
            let top = reach[n_steps].iter().fold(0.0, |a: f64, &v| a.max(v));
            rows.scale = vec![1.0; rows.l.len()];
            for &i in &omega_buses {
                for k in 1..=n_steps {
                    let (lo, hi) = omega_interval(model, phi, &slot_of, i, k);
                    if lo.is_finite() || hi.is_finite() {
                        rows.push([(wi(k, i), 1.0)], lo, hi, RowKey::Omega { bus: i, k });
                        let sens = reach[k][i].max(SENSITIVITY_FLOOR * top);
                        rows.scale.push(if sens > 0.0 { 1.0 / sens } else { 1.0 });
                    }
                }
            }
        }
        Formulation::Condensed => {
            n_vars = n_steps * nc;
            u_off = 0;
            let zeros_n = vec![0.0; n];
            // Free response under the forecast with zero input.
            let mut free = vec![x0.omega.clone()];
            let mut f = x0.f.clone();
            for k in 0..n_steps {
                let (nf, nw) = euler_step(model, &f, &free[k], &forecast[k], &zeros_n, period);
                f = nf;
                free.push(nw);
            }
            let impulse = impulse_responses(model, &controlled, n_steps, period);
            for &i in &omega_buses {
                for k in 1..=n_steps {
                    let (lo, hi) = omega_interval(model, phi, &slot_of, i, k);
                    if !(lo.is_finite() || hi.is_finite()) {
                        continue;
                    }
                    let entries = (0..k).flat_map(|k0| {
                        impulse
                            .iter()
                            .enumerate()
                            .map(move |(slot, resp)| (k0 * nc + slot, resp[k - k0][i]))
                    });
                    let h = free[k][i];
                    rows.push(entries, lo - h, hi - h, RowKey::Omega { bus: i, k });
                }
            }
        }
    }
    for (slot, _) in controlled.iter().enumerate() {
        for k in 0..n_steps {
            let (lo, hi) = phi.mode(slot, k).input_interval();
            rows.push(
                [(u_off + k * nc + slot, 1.0)],
                lo,
                hi,
                RowKey::Input { slot, k },
            );
            if !rows.scale.is_empty() {
                rows.scale.push(1.0);
            }
        }
    }

    let p_triplets: Vec<(usize, usize, f64)> = (0..n_steps)
        .flat_map(|k| {
            controlled
                .iter()
                .enumerate()
                .map(move |(slot, &i)| (u_off + k * nc + slot, i))
        })
        .map(|(v, i)| (v, v, 2.0 * weights[i]))
        .collect();
    let n_rows = rows.l.len();
    let problem = QpProblem {
        p: CsrMatrix::from_triplets(n_vars, n_vars, &p_triplets),
        q: vec![0.0; n_vars],
        a: CsrMatrix::from_triplets(n_rows, n_vars, &rows.triplets),
        l: rows.l,
        u: rows.u,
        row_scale: (!rows.scale.is_empty()).then_some(rows.scale),
    };
    Ok(MpcQp {
        problem,
        formulation,
        row_keys: rows.keys,
        phi: phi.clone(),
        x0: x0.clone(),
        forecast: forecast[..n_steps].to_vec(),
        weights: weights.to_vec(),
        period,
        n_lines: m,
        n_buses: n,
    })
}
