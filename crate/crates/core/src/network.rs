//! Network graph, per-bus physics, and region decomposition.
//!
//! Buses carry file labels; every matrix and vector in the crate is indexed
//! by the dense internal index (position in [`NetworkModel::buses`]). Each
//! line has an orientation: `from` is the positive end, `to` the negative end.

use std::collections::{BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network has no buses")]
    Empty,
    #[error("duplicate bus label {0}")]
    DuplicateBus(u32),
    #[error("line {line} references unknown bus index {bus}")]
    BusOutOfRange { line: usize, bus: usize },
    #[error("line {line} is a self-loop at bus {bus}")]
    SelfLoop { line: usize, bus: usize },
    #[error("line {line} duplicates an earlier line between buses {a} and {b}")]
    DuplicateLine { line: usize, a: u32, b: u32 },
    #[error("line {line} has non-positive susceptance {value}")]
    Susceptance { line: usize, value: f64 },
    #[error(
        "bus {bus}: inertia and damping must be strictly positive (got M={inertia}, E={damping})"
    )]
    Physics {
        bus: u32,
        inertia: f64,
        damping: f64,
    },
    #[error("bus {0} is frequency-constrained but has no controller")]
    ConstrainedNotControlled(u32),
    #[error("bus {bus}: frequency band ordering violated ({detail})")]
    BandOrdering { bus: u32, detail: String },
    #[error("network is not connected (bus {0} unreachable from bus {1})")]
    Disconnected(u32, u32),
    #[error("unknown bus label {0}")]
    UnknownBus(u32),
}

/// A closed frequency interval `[lower, upper]` in Hz deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqBand {
    pub lower: f64,
    pub upper: f64,
}

impl FreqBand {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self::new(-half_width, half_width)
    }

    /// Membership in the open interval `(lower, upper)`.
    pub fn contains_open(&self, w: f64) -> bool {
        self.lower < w && w < self.upper
    }

    pub fn contains_closed(&self, w: f64) -> bool {
        self.lower <= w && w <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Label as written in scenario files.
    pub label: u32,
    pub inertia: f64,
    pub damping: f64,
    /// Dead-zone thresholds; present iff the bus has a sub-controller.
    pub thresholds: Option<FreqBand>,
    /// Safe frequency bounds; present iff the bus is frequency-constrained.
    pub safe_bounds: Option<FreqBand>,
}

impl Bus {
    pub fn plain(label: u32, inertia: f64, damping: f64) -> Self {
        Self {
            label,
            inertia,
            damping,
            thresholds: None,
            safe_bounds: None,
        }
    }

    pub fn controlled(mut self, thresholds: FreqBand) -> Self {
        self.thresholds = Some(thresholds);
        self
    }

    pub fn constrained(mut self, bounds: FreqBand) -> Self {
        self.safe_bounds = Some(bounds);
        self
    }

    pub fn is_controlled(&self) -> bool {
        self.thresholds.is_some()
    }

    pub fn is_freq_constrained(&self) -> bool {
        self.safe_bounds.is_some()
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.inertia) || !ok(self.damping) {
            return Err(NetworkError::Physics {
                bus: self.label,
                inertia: self.inertia,
                damping: self.damping,
            });
        }
        let band_err = |detail: String| NetworkError::BandOrdering {
            bus: self.label,
            detail,
        };
        if let Some(thr) = self.thresholds {
            // The stability condition needs thr_lo < 0 < thr_hi so that the sign
            // restrictions in the saturated modes imply omega * u <= 0.
            if !(thr.lower < 0.0 && 0.0 < thr.upper) {
                return Err(band_err(format!(
                    "thresholds must satisfy lower < 0 < upper, got ({}, {})",
                    thr.lower, thr.upper
                )));
            }
        }
        match (self.safe_bounds, self.thresholds) {
            (Some(_), None) => Err(NetworkError::ConstrainedNotControlled(self.label)),
            (Some(b), Some(t)) => {
                if b.lower < t.lower && t.lower < t.upper && t.upper < b.upper {
                    Ok(())
                } else {
                    Err(band_err(format!(
                        "need lower {} < thr_lower {} < thr_upper {} < upper {}",
                        b.lower, t.lower, t.upper, b.upper
                    )))
                }
            }
            _ => Ok(()),
        }
    }
}

/// A transmission line oriented from its positive end `from` to its negative end `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, susceptance: f64) -> Self {
        Self {
            from,
            to,
            susceptance,
        }
    }

    /// Same line with the opposite orientation.
    pub fn flipped(self) -> Self {
        Self {
            from: self.to,
            to: self.from,
            ..self
        }
    }
}

/// Signed incidence matrix: row `k` is `+1` at the positive end of line `k`
/// and `-1` at its negative end.
pub fn build_incidence(lines: &[Line], n_buses: usize) -> Result<DMatrix<f64>, NetworkError> {
    check_line_structure(lines, n_buses, |i| i as u32)?;
    let mut d = DMatrix::zeros(lines.len(), n_buses);
    for (k, line) in lines.iter().enumerate() {
        d[(k, line.from)] = 1.0;
        d[(k, line.to)] = -1.0;
    }
    Ok(d)
}

fn check_line_structure(
    lines: &[Line],
    n_buses: usize,
    label: impl Fn(usize) -> u32,
) -> Result<(), NetworkError> {
    let mut seen = BTreeSet::new();
    for (k, line) in lines.iter().enumerate() {
        for bus in [line.from, line.to] {
            if bus >= n_buses {
                return Err(NetworkError::BusOutOfRange { line: k, bus });
            }
        }
        if line.from == line.to {
            return Err(NetworkError::SelfLoop {
                line: k,
                bus: line.from,
            });
        }
        let key = (line.from.min(line.to), line.from.max(line.to));
        if !seen.insert(key) {
            return Err(NetworkError::DuplicateLine {
                line: k,
                a: label(key.0),
                b: label(key.1),
            });
        }
    }
    Ok(())
}

/// Immutable power network: buses, oriented lines, incidence `D` and the
/// diagonal susceptance matrix `Y_b` (stored as a vector).
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    incidence: DMatrix<f64>,
    susceptance: Vec<f64>,
    index_of: HashMap<u32, usize>,
}

impl NetworkModel {
    /// Builds and validates a network. The graph must be connected.
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, NetworkError> {
        let model = Self::new_unchecked_connectivity(buses, lines)?;
        model.check_connected()?;
        Ok(model)
    }

    /// Like [`NetworkModel::new`] but allows a disconnected graph. Induced
    /// regional subgraphs use this.
    pub(crate) fn new_unchecked_connectivity(
        buses: Vec<Bus>,
        lines: Vec<Line>,
    ) -> Result<Self, NetworkError> {
        if buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut index_of = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index_of.insert(bus.label, i).is_some() {
                return Err(NetworkError::DuplicateBus(bus.label));
            }
            bus.validate()?;
        }
        check_line_structure(&lines, buses.len(), |i| buses[i].label)?;
        for (k, line) in lines.iter().enumerate() {
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(NetworkError::Susceptance {
                    line: k,
                    value: line.susceptance,
                });
            }
        }
        let incidence = build_incidence(&lines, buses.len())?;
        let susceptance = lines.iter().map(|l| l.susceptance).collect();
        Ok(Self {
            buses,
            lines,
            incidence,
            susceptance,
            index_of,
        })
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let reached = self.reachable_from(0);
        match reached.iter().position(|r| !r) {
            Some(i) => Err(NetworkError::Disconnected(
                self.buses[i].label,
                self.buses[0].label,
            )),
            None => Ok(()),
        }
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n_buses()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen
    }

    /// Neighbour lists `(bus, line)` per bus.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for (k, l) in self.lines.iter().enumerate() {
            adj[l.from].push((l.to, k));
            adj[l.to].push((l.from, k));
        }
        adj
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Diagonal of `Y_b`.
    pub fn susceptance(&self) -> &[f64] {
        &self.susceptance
    }

    pub fn index_of(&self, label: u32) -> Result<usize, NetworkError> {
        self.index_of
            .get(&label)
            .copied()
            .ok_or(NetworkError::UnknownBus(label))
    }

    pub fn label(&self, bus: usize) -> u32 {
        self.buses[bus].label
    }

    pub fn inertia(&self) -> impl Iterator<Item = f64> + '_ {
        self.buses.iter().map(|b| b.inertia)
    }

    pub fn damping(&self) -> impl Iterator<Item = f64> + '_ {
        self.buses.iter().map(|b| b.damping)
    }

    /// Internal indices of buses with a sub-controller (`I^u`), ascending.
    pub fn controlled(&self) -> Vec<usize> {
        (0..self.n_buses())
            .filter(|&i| self.buses[i].is_controlled())
            .collect()
    }

    /// Internal indices of frequency-constrained buses (`I^omega`), ascending.
    pub fn constrained(&self) -> Vec<usize> {
        (0..self.n_buses())
            .filter(|&i| self.buses[i].is_freq_constrained())
            .collect()
    }

    /// `D * omega`: per line, frequency at the positive end minus the negative end.
    pub fn d_mul(&self, omega: &[f64]) -> Vec<f64> {
        self.lines
            .iter()
            .map(|l| omega[l.from] - omega[l.to])
            .collect()
    }

    /// `D^T * f`, accumulated into `out` (overwritten).
    pub fn dt_mul_into(&self, f: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (l, &fk) in self.lines.iter().zip(f) {
            out[l.from] += fk;
            out[l.to] -= fk;
        }
    }

    pub fn dt_mul(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses()];
        self.dt_mul_into(f, &mut out);
        out
    }

    /// Weighted Laplacian `D^T Y_b D`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_buses();
        let mut lap = DMatrix::zeros(n, n);
        for l in &self.lines {
            let b = l.susceptance;
            lap[(l.from, l.from)] += b;
            lap[(l.to, l.to)] += b;
            lap[(l.from, l.to)] -= b;
            lap[(l.to, l.from)] -= b;
        }
        lap
    }

    /// Same network with line `k` reversed.
    pub fn with_flipped_line(&self, k: usize) -> Self {
        let mut lines = self.lines.clone();
        lines[k] = lines[k].flipped();
        Self::new_unchecked_connectivity(self.buses.clone(), lines)
            .expect("flipping preserves validity")
    }

    /// Buses within `hops` edges of `center` (inclusive), ascending internal index.
    pub fn k_hop_neighborhood(&self, center: usize, hops: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let mut dist = vec![usize::MAX; self.n_buses()];
        dist[center] = 0;
        let mut queue = VecDeque::from([center]);
        while let Some(i) = queue.pop_front() {
            if dist[i] == hops {
                continue;
            }
            for &(j, _) in &adj[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        (0..self.n_buses()).filter(|&i| dist[i] <= hops).collect()
    }
}

/// A line that straddles a region boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub line: usize,
    /// Endpoint inside the region.
    pub inside: usize,
    pub outside: usize,
    /// Whether the inside endpoint is the positive end of the line.
    pub inside_is_positive: bool,
}

/// Returns every line with exactly one endpoint in `buses`.
pub fn boundary_edges(
    model: &NetworkModel,
    buses: &[usize],
) -> Result<Vec<BoundaryEdge>, NetworkError> {
    let member = membership(model, buses)?;
    Ok(model
        .lines()
        .iter()
        .enumerate()
        .filter_map(|(k, l)| match (member[l.from], member[l.to]) {
            (true, false) => Some(BoundaryEdge {
                line: k,
                inside: l.from,
                outside: l.to,
                inside_is_positive: true,
            }),
            (false, true) => Some(BoundaryEdge {
                line: k,
                inside: l.to,
                outside: l.from,
                inside_is_positive: false,
            }),
            _ => None,
        })
        .collect())
}

fn membership(model: &NetworkModel, buses: &[usize]) -> Result<Vec<bool>, NetworkError> {
    let mut member = vec![false; model.n_buses()];
    for &b in buses {
        if b >= model.n_buses() {
            return Err(NetworkError::UnknownBus(b as u32));
        }
        member[b] = true;
    }
    Ok(member)
}

/// Induced subgraph of the network, with its boundary and index maps.
///
/// Local bus order follows ascending global index and local line order follows
/// ascending global line index, so a region covering the whole network has the
/// identity maps.
#[derive(Debug, Clone)]
pub struct Region {
    pub id: usize,
    /// Global bus indices, ascending.
    pub buses: Vec<usize>,
    /// Global indices of lines with both endpoints in the region, ascending.
    pub interior_lines: Vec<usize>,
    pub boundary: Vec<BoundaryEdge>,
    local_bus: HashMap<usize, usize>,
    subnetwork: NetworkModel,
}

impl Region {
    pub fn new(model: &NetworkModel, id: usize, buses: &[usize]) -> Result<Self, NetworkError> {
        let member = membership(model, buses)?;
        let buses: Vec<usize> = (0..model.n_buses()).filter(|&i| member[i]).collect();
        if buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        let local_bus: HashMap<usize, usize> =
            buses.iter().enumerate().map(|(l, &g)| (g, l)).collect();
        let interior_lines: Vec<usize> = (0..model.n_lines())
            .filter(|&k| {
                let l = model.lines()[k];
                member[l.from] && member[l.to]
            })
            .collect();
        let boundary = boundary_edges(model, &buses)?;
        let sub_buses = buses.iter().map(|&g| model.buses()[g].clone()).collect();
        let sub_lines = interior_lines
            .iter()
            .map(|&k| {
                let l = model.lines()[k];
                Line::new(local_bus[&l.from], local_bus[&l.to], l.susceptance)
            })
            .collect();
        let subnetwork = NetworkModel::new_unchecked_connectivity(sub_buses, sub_lines)?;
        Ok(Self {
            id,
            buses,
            interior_lines,
            boundary,
            local_bus,
            subnetwork,
        })
    }

    /// The region covering the whole network.
    pub fn whole(model: &NetworkModel) -> Self {
        let all: Vec<usize> = (0..model.n_buses()).collect();
        Self::new(model, 0, &all).expect("whole network is a valid region")
    }

    pub fn contains(&self, bus: usize) -> bool {
        self.local_bus.contains_key(&bus)
    }

    pub fn local_index(&self, bus: usize) -> Option<usize> {
        self.local_bus.get(&bus).copied()
    }

    /// Induced subgraph `G_beta` in local indices.
    pub fn subnetwork(&self) -> &NetworkModel {
        &self.subnetwork
    }

    /// Controlled buses of the region (`I^u_beta`), global indices.
    pub fn controlled(&self, model: &NetworkModel) -> Vec<usize> {
        self.buses
            .iter()
            .copied()
            .filter(|&g| model.buses()[g].is_controlled())
            .collect()
    }
}

/// Result of checking the regional decomposition assumption.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionReport {
    /// Controlled bus labels that belong to no region.
    pub uncovered: Vec<u32>,
    /// Controlled bus labels that belong to more than one region, with region ids.
    pub shared: Vec<(u32, Vec<usize>)>,
}

impl RegionReport {
    pub fn is_ok(&self) -> bool {
        self.uncovered.is_empty() && self.shared.is_empty()
    }
}

impl std::fmt::Display for RegionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_ok() {
            return write!(f, "regions ok");
        }
        for bus in &self.uncovered {
            writeln!(f, "controlled bus {bus} is not in any region")?;
        }
        for (bus, ids) in &self.shared {
            writeln!(f, "controlled bus {bus} is shared by regions {ids:?}")?;
        }
        Ok(())
    }
}

/// Every controlled bus must lie in exactly one region. Uncontrolled buses may
/// appear in several regions.
pub fn validate_regions(model: &NetworkModel, regions: &[Region]) -> RegionReport {
    let mut report = RegionReport::default();
    for i in model.controlled() {
        let owners: Vec<usize> = regions
            .iter()
            .filter(|r| r.contains(i))
            .map(|r| r.id)
            .collect();
        match owners.len() {
            0 => report.uncovered.push(model.label(i)),
            1 => {}
            _ => report.shared.push((model.label(i), owners)),
        }
    }
    report
}
