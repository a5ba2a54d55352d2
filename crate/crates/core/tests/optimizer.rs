//! Horizon problem assembly and solution on small networks.

mod common;

use freqctl::dynamics::{compute_equilibrium, State};
use freqctl::network::{Bus, FreqBand, Line, NetworkModel};
use freqctl::optimizer::{
    assemble_qp, build_phi_cvx, phi_disc_member, solve_mpc, Formulation, Mode, RowKey,
};
use freqctl::qp::{QpSettings, QpStatus, WarmStart};
use freqctl::reference::{generate_reference, HorizonTrajectory, RefGains};
use freqctl::signals::Forecast;
use proptest::prelude::*;
use rand::Rng;

use common::{perturbed_state, random_injection, random_network, rng};

fn two_bus() -> NetworkModel {
    let bus = |label| {
        Bus::plain(label, 0.5, 1.0)
            .controlled(FreqBand::new(-0.1, 0.1))
            .constrained(FreqBand::symmetric(0.2))
    };
    NetworkModel::new(vec![bus(1), bus(2)], vec![Line::new(0, 1, 2.0)]).unwrap()
}

fn hold(p: &[f64], n_steps: usize, period: f64) -> Forecast {
    Forecast {
        anchor: 0.0,
        period,
        columns: vec![p.to_vec(); n_steps],
    }
}

#[test]
fn two_bus_two_steps_has_six_dynamics_rows() {
    let model = two_bus();
    let x0 = State {
        f: vec![0.0],
        omega: vec![0.15, -0.05],
    };
    let forecast = hold(&[0.0, 0.0], 2, 0.01);
    let gains = vec![RefGains::default(); 2];
    let reference = generate_reference(&model, &x0, &forecast, &gains, 2, 0.01).unwrap();
    let phi = build_phi_cvx(&model, &reference.trajectory);
    let mpc = assemble_qp(
        &model,
        &x0,
        &forecast.columns,
        &phi,
        &[1.0, 1.0],
        0.01,
        Formulation::Sparse,
    )
    .unwrap();
    let dynamics = mpc
        .row_keys
        .iter()
        .filter(|k| matches!(k, RowKey::Flow { .. } | RowKey::Swing { .. }))
        .count();
    assert_eq!(dynamics, 6);
    assert!(
        mpc.problem
            .constraint_violation(&mpc.encode(&reference.trajectory))
            <= 1e-12
    );
}

#[test]
fn all_interior_horizon_has_zero_optimum() {
    let model = two_bus();
    let p = [0.3, -0.3];
    let x0 = compute_equilibrium(&model, &p, &[0.0])
        .unwrap()
        .state(&model);
    let forecast = hold(&p, 20, 0.001);
    let gains = vec![RefGains::default(); 2];
    let reference = generate_reference(&model, &x0, &forecast, &gains, 20, 0.001).unwrap();
    let phi = build_phi_cvx(&model, &reference.trajectory);
    assert!(phi.all_interior());
    for form in [Formulation::Sparse, Formulation::Condensed] {
        let mpc = assemble_qp(
            &model,
            &x0,
            &forecast.columns,
            &phi,
            &[1.0, 1.0],
            0.001,
            form,
        )
        .unwrap();
        let sol = solve_mpc(&model, &mpc, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(
            sol.objective.abs() <= 1e-12,
            "{form:?}: objective {}",
            sol.objective
        );
        assert!(
            sol.first_input().iter().all(|u| u.abs() <= 1e-9),
            "{form:?}"
        );
    }
}

#[test]
fn warm_and_cold_starts_reach_the_same_optimum() {
    let mut r = rng(31);
    let mut checked = 0;
    for _ in 0..10 {
        let n = r.random_range(3..=6);
        let model = random_network(&mut r, n);
        let p = random_injection(&mut r, &model, 0.02);
        let x0 = perturbed_state(&mut r, &model, &p, 0.19);
        let forecast = hold(&p, 40, 0.001);
        let gains = vec![RefGains::default(); n];
        let weights = vec![1.0; n];
        let reference = generate_reference(&model, &x0, &forecast, &gains, 40, 0.001).unwrap();
        let phi = build_phi_cvx(&model, &reference.trajectory);
        if phi.all_interior() {
            continue;
        }
        let mpc = assemble_qp(
            &model,
            &x0,
            &forecast.columns,
            &phi,
            &weights,
            0.001,
            Formulation::Sparse,
        )
        .unwrap();
        let settings = QpSettings::default();
        let cold = solve_mpc(&model, &mpc, &settings, None).unwrap();
        let warm = WarmStart {
            x: mpc.encode(&reference.trajectory),
            y: vec![0.0; mpc.problem.n_rows()],
        };
        let warmed = solve_mpc(&model, &mpc, &settings, Some(&warm)).unwrap();
        assert_eq!(cold.status, QpStatus::Optimal);
        assert_eq!(warmed.status, QpStatus::Optimal);
        let gap = (cold.objective - warmed.objective).abs();
        assert!(
            gap <= 1e-6 * (1.0 + cold.objective.abs()),
            "objectives {} {}",
            cold.objective,
            warmed.objective
        );
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} cases needed control");
}

fn three_bus() -> NetworkModel {
    let bus = |label| Bus::plain(label, 0.3, 1.0).controlled(FreqBand::new(-0.1, 0.1));
    NetworkModel::new(
        vec![bus(1), bus(2), bus(3)],
        vec![Line::new(0, 1, 1.0), Line::new(1, 2, 1.0)],
    )
    .unwrap()
}

proptest! {
    #[test]
    fn convex_set_lies_inside_sign_set(
        reference in prop::collection::vec(prop::collection::vec(-0.3f64..0.3, 3), 2..12),
        depth in prop::collection::vec(prop::collection::vec(0.0f64..0.3, 3), 12),
        size in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 3), 12),
    ) {
        let model = three_bus();
        let n_steps = reference.len() - 1;
        let traj = HorizonTrajectory {
            flows: vec![vec![0.0; 2]; n_steps + 1],
            omega: reference,
            inputs: vec![vec![0.0; 3]; n_steps],
            forecast: vec![vec![0.0; 3]; n_steps],
        };
        let phi = build_phi_cvx(&model, &traj);
        let mut omega = vec![vec![0.0; 3]; n_steps];
        let mut inputs = vec![vec![0.0; 3]; n_steps];
        for (slot, &i) in phi.buses.iter().enumerate() {
            for k in 0..n_steps {
                let (w, u) = match phi.mode(slot, k) {
                    Mode::Upper => (0.1 + depth[k][i], -size[k][i]),
                    Mode::Lower => (-0.1 - depth[k][i], size[k][i]),
                    Mode::Interior => (depth[k][i] - 0.15, 0.0),
                };
                omega[k][i] = w;
                inputs[k][i] = u;
            }
        }
        prop_assert!(phi.contains(&model, &omega, &inputs, 0.0));
        prop_assert!(phi_disc_member(&model, &omega, &inputs));
    }
}
