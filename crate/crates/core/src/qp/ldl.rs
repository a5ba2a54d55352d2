//! Skyline (variable-band) `LDL^T` factorization for symmetric quasi-definite
//! matrices, with reverse Cuthill-McKee ordering to keep the profile narrow on
//! stage-structured problems.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero or non-finite pivot {value} at position {index}")]
    Pivot { index: usize, value: f64 },
}

/// Above this many clique pairs the graph is treated as dense and not reordered.
const RCM_PAIR_LIMIT: usize = 4_000_000;

/// Sparsity structure of a symmetric matrix: explicit pairs plus cliques
/// (index sets whose entries are all mutually coupled, e.g. rows of `A` in `A^T A`).
#[derive(Debug, Clone, Default)]
pub struct Structure {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub cliques: Vec<Vec<usize>>,
}

impl Structure {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Default::default()
        }
    }

    fn clique_pairs(&self) -> usize {
        self.cliques.iter().map(|c| c.len() * c.len()).sum()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        self.adjacency_of(true)
    }

    fn adjacency_of(&self, with_cliques: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.pairs {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for c in self.cliques.iter().filter(|_| with_cliques) {
            for &a in c {
                for &b in c {
                    if a != b {
                        adj[a].push(b);
                    }
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Reverse Cuthill-McKee ordering; returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !placed[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unplaced node exists");
        let start = pseudo_peripheral(adj, &degree, &placed, seed);
        let mut queue = VecDeque::from([start]);
        placed[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !placed[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                placed[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], placed: &[bool], seed: usize) -> usize {
    let mut start = seed;
    let mut best_depth = 0;
    for _ in 0..4 {
        let (depth, last_level) = bfs_levels(adj, placed, start);
        let candidate = *last_level
            .iter()
            .min_by_key(|&&w| (degree[w], w))
            .expect("level is nonempty");
        if depth <= best_depth {
            break;
        }
        best_depth = depth;
        start = candidate;
    }
    start
}

fn bfs_levels(adj: &[Vec<usize>], placed: &[bool], start: usize) -> (usize, Vec<usize>) {
    let mut seen = placed.to_vec();
    seen[start] = true;
    let mut level = vec![start];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &level {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, level);
        }
        depth += 1;
        level = next;
    }
}

/// Profile-stored symmetric matrix and, after [`SkylineLdl::factor`], its
/// `L D L^T` factors in place.
#[derive(Debug, Clone)]
pub struct SkylineLdl {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    first: Vec<usize>,
    rowptr: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SkylineLdl {
    /// Allocates zeroed storage for the structure, reordering with RCM unless
    /// the structure is effectively dense.
    pub fn analyze(structure: &Structure) -> Self {
        let n = structure.n;
        let perm = if structure.clique_pairs() <= RCM_PAIR_LIMIT {
            reverse_cuthill_mckee(&structure.adjacency())
        } else {
            (0..n).collect()
        };
        Self::with_permutation(structure, perm)
    }

    /// Ordering for a quasi-definite KKT matrix whose first `n_primal` indices
    /// are primal. Follows RCM but delays every constraint index until all of
    /// its primal neighbours are placed, so that the negative pivots are never
    /// taken before the positive ones they couple to.
    pub fn analyze_kkt(structure: &Structure, n_primal: usize) -> Self {
        // Dense cliques leave nothing for RCM to gain; keep the primal order and
        // only apply the delay rule, which needs the explicit pairs alone.
        let dense = structure.clique_pairs() > RCM_PAIR_LIMIT;
        let adj = structure.adjacency_of(!dense);
        let rcm = if dense {
            (0..structure.n).collect()
        } else {
            reverse_cuthill_mckee(&adj)
        };
        let mut pending: Vec<usize> = adj
            .iter()
            .map(|list| list.iter().filter(|&&w| w < n_primal).count())
            .collect();
        let mut perm = Vec::with_capacity(structure.n);
        for &v in rcm.iter().filter(|&&v| v < n_primal) {
            perm.push(v);
            for &w in &adj[v] {
                if w >= n_primal {
                    pending[w] -= 1;
                    if pending[w] == 0 {
                        perm.push(w);
                    }
                }
            }
        }
        perm.extend((n_primal..structure.n).filter(|&w| adj[w].iter().all(|&v| v >= n_primal)));
        Self::with_permutation(structure, perm)
    }

    pub fn with_permutation(structure: &Structure, perm: Vec<usize>) -> Self {
        let n = structure.n;
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j) in &structure.pairs {
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = (a.max(b), a.min(b));
            first[r] = first[r].min(c);
        }
        for clique in &structure.cliques {
            if let Some(lo) = clique.iter().map(|&i| iperm[i]).min() {
                for &i in clique {
                    let p = iperm[i];
                    first[p] = first[p].min(lo);
                }
            }
        }
        let mut rowptr = Vec::with_capacity(n + 1);
        rowptr.push(0);
        for i in 0..n {
            rowptr.push(rowptr[i] + i - first[i] + 1);
        }
        let len = rowptr[n];
        Self {
            n,
            perm,
            iperm,
            first,
            rowptr,
            vals: vec![0.0; len],
            diag: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries (profile size).
    pub fn profile(&self) -> usize {
        self.vals.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.iperm[i], self.iperm[j]);
        let (r, c) = (a.max(b), a.min(b));
        debug_assert!(
            c >= self.first[r],
            "entry ({i}, {j}) outside analyzed structure"
        );
        self.rowptr[r] + c - self.first[r]
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)` (stored once).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.vals[s] += v;
    }

    /// Adds `weight * a a^T` restricted to the support `idx`.
    pub fn add_outer(&mut self, idx: &[usize], a: &[f64], weight: f64) {
        for p in 0..idx.len() {
            let wp = weight * a[p];
            for q in 0..=p {
                self.add(idx[p], idx[q], wp * a[q]);
            }
        }
    }

    pub fn factor(&mut self) -> Result<(), LinalgError> {
        let mut scale: f64 = 0.0;
        for i in 0..self.n {
            let (fi, start) = (self.first[i], self.rowptr[i]);
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let row_i = &self.vals[start + (k0 - fi)..start + (j - fi)];
                let row_j = &self.vals[self.rowptr[j] + (k0 - fj)..self.rowptr[j] + (j - fj)];
                let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                self.vals[start + j - fi] -= dot;
            }
            let mut d = self.vals[start + i - fi];
            scale = scale.max(d.abs());
            for k in fi..i {
                let u = self.vals[start + k - fi];
                let l = u / self.diag[k];
                d -= u * l;
                self.vals[start + k - fi] = l;
            }
            if !d.is_finite() || d.abs() <= 1e-15 * scale {
                return Err(LinalgError::Pivot { index: i, value: d });
            }
            self.diag[i] = d;
        }
        Ok(())
    }

    /// Solves `K x = b` with the factored matrix.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..self.n {
            let (fi, start) = (self.first[i], self.rowptr[i]);
            let row = &self.vals[start..start + (i - fi)];
            let dot: f64 = row.iter().zip(&x[fi..i]).map(|(l, y)| l * y).sum();
            x[i] -= dot;
        }
        for (xi, d) in x.iter_mut().zip(&self.diag) {
            *xi /= d;
        }
        for i in (0..self.n).rev() {
            let (fi, start) = (self.first[i], self.rowptr[i]);
            let xi = x[i];
            if xi != 0.0 {
                for k in fi..i {
                    x[k] -= self.vals[start + k - fi] * xi;
                }
            }
        }
        let mut out = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}
