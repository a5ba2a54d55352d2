#![allow(dead_code)]

use std::collections::HashSet;

use freqctl::dynamics::{compute_equilibrium, State};
use freqctl::network::{Bus, FreqBand, Line, NetworkModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected network on `n` buses: a random spanning tree plus about `n / 2`
/// extra lines. At least one bus is controlled and at least one controlled bus
/// carries safe bounds of +-0.2.
pub fn random_network(rng: &mut ChaCha8Rng, n: usize) -> NetworkModel {
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    let mut lines = Vec::new();
    let mut add = |a: usize, b: usize, rng: &mut ChaCha8Rng, lines: &mut Vec<Line>| {
        let key = (a.min(b), a.max(b));
        if a != b && edges.insert(key) {
            lines.push(Line::new(a, b, rng.random_range(0.5..3.0)));
        }
    };
    for i in 1..n {
        let j = rng.random_range(0..i);
        add(j, i, rng, &mut lines);
    }
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        add(a, b, rng, &mut lines);
    }

    let mut controlled: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    if !controlled.iter().any(|&c| c) {
        controlled[rng.random_range(0..n)] = true;
    }
    let mut constrained: Vec<bool> = controlled
        .iter()
        .map(|&c| c && rng.random_bool(0.7))
        .collect();
    if !constrained.iter().any(|&c| c) {
        let first = controlled.iter().position(|&c| c).unwrap();
        constrained[first] = true;
    }
    let buses = (0..n)
        .map(|i| {
            let mut bus = Bus::plain(
                i as u32 + 1,
                rng.random_range(0.05..0.5),
                rng.random_range(0.5..1.5),
            );
            if controlled[i] {
                let lo = -rng.random_range(0.05..0.12);
                let hi = rng.random_range(0.05..0.12);
                bus = bus.controlled(FreqBand::new(lo, hi));
            }
            if constrained[i] {
                bus = bus.constrained(FreqBand::symmetric(0.2));
            }
            bus
        })
        .collect();
    NetworkModel::new(buses, lines).expect("random network is valid")
}

/// Injections with synchronized frequency `sum(p) / sum(E)` inside +-`drift`.
pub fn random_injection(rng: &mut ChaCha8Rng, model: &NetworkModel, drift: f64) -> Vec<f64> {
    let n = model.n_buses();
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    let total_damping: f64 = model.damping().sum();
    let offset = rng.random_range(-drift..drift) * total_damping / n as f64;
    p.iter_mut().for_each(|v| *v += offset - mean);
    p
}

/// Equilibrium flows for `p` with every frequency perturbed by up to
/// `spread`, kept within +-0.19 at constrained buses.
pub fn perturbed_state(
    rng: &mut ChaCha8Rng,
    model: &NetworkModel,
    p: &[f64],
    spread: f64,
) -> State {
    let f0 = vec![0.0; model.n_lines()];
    let eq = compute_equilibrium(model, p, &f0).expect("equilibrium exists");
    let mut x = eq.state(model);
    for (i, w) in x.omega.iter_mut().enumerate() {
        *w += rng.random_range(-spread..spread);
        if model.buses()[i].is_freq_constrained() {
            *w = w.clamp(-0.19, 0.19);
        }
    }
    x
}
