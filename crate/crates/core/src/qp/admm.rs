use super::ldl::{LinalgError, SkylineLdl, Structure};
use super::{inf_norm, CsrMatrix, QpError, QpProblem, QpResult, QpSettings, QpStatus, WarmStart};

/// A polished point solves the KKT system of its active set to round-off; one
/// that only meets the tolerances has missed an active row.
const POLISH_ACCEPT: f64 = 1e-3;
/// Polishing solves per attempt, each adding the rows the previous one violated.
const POLISH_ROUNDS: usize = 3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Penalty of equality rows; large enough that they hold to round-off.
const RHO_EQ: f64 = 1e6;
const EQ_TOL: f64 = 1e-10;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Free,
    Inequality,
    Equality,
}

/// Problem data after Ruiz equilibration: `P' = c D P D`, `q' = c D q`,
/// `A' = E A D`, bounds `E l`, `E u`.
struct Scaled {
    p: CsrMatrix,
    q: Vec<f64>,
    a: CsrMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn clamp_norm(v: f64) -> f64 {
    if v < SCALE_MIN {
        1.0
    } else {
        v.min(SCALE_MAX)
    }
}

fn equilibrate(problem: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (problem.n_vars(), problem.n_rows());
    let mut p = problem.p.clone();
    let mut a = problem.a.clone();
    let mut q = problem.q.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    let fixed_rows = problem.row_scale.is_some();
    if let Some(scale) = &problem.row_scale {
        // Row scales are squared into the penalty; keep the caller's
        // relative weights.
        a.scale(scale, &vec![1.0; n]);
        e.copy_from_slice(scale);
    }
    for _ in 0..iters {
        let pn = p.col_inf_norms();
        let an = a.col_inf_norms();
        // Given row scales fix the penalty weights; column scaling would then
        // only distort the proximal term, so both are left alone.
        let (delta, eps): (Vec<f64>, Vec<f64>) = if fixed_rows {
            (vec![1.0; n], vec![1.0; m])
        } else {
            (
                (0..n)
                    .map(|j| 1.0 / clamp_norm(pn[j].max(an[j])).sqrt())
                    .collect(),
                a.row_inf_norms()
                    .into_iter()
                    .map(|r| 1.0 / clamp_norm(r).sqrt())
                    .collect(),
            )
        };
        p.scale(&delta, &delta);
        a.scale(&eps, &delta);
        q.iter_mut().zip(&delta).for_each(|(qi, di)| *qi *= di);
        d.iter_mut().zip(&delta).for_each(|(x, y)| *x *= y);
        e.iter_mut().zip(&eps).for_each(|(x, y)| *x *= y);

        let pn = p.col_inf_norms();
        let mean = if n > 0 {
            pn.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let gamma = 1.0 / clamp_norm(mean.max(inf_norm(&q)));
        if gamma != 1.0 {
            p.values.iter_mut().for_each(|v| *v *= gamma);
            q.iter_mut().for_each(|v| *v *= gamma);
            c *= gamma;
        }
    }
    let l = problem.l.iter().zip(&e).map(|(x, s)| x * s).collect();
    let u = problem.u.iter().zip(&e).map(|(x, s)| x * s).collect();
    Scaled {
        p,
        q,
        a,
        l,
        u,
        d,
        e,
        c,
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    eps_primal: f64,
    eps_dual: f64,
    /// `max(|Ax|, |z|)` over rows that are not equalities, and
    /// `max(|Px|, |A^T y|, |q|)`.
    primal_scale: f64,
    dual_scale: f64,
}

impl Residuals {
    fn converged(&self) -> bool {
        self.primal <= self.eps_primal && self.dual <= self.eps_dual
    }

    fn near(&self, factor: f64) -> bool {
        self.primal <= factor * self.eps_primal && self.dual <= factor * self.eps_dual
    }
}

/// ADMM state. Equality rows are not penalized but enforced in the `x` step
/// through the quasi-definite system
/// `[P + sigma I + A_I^T R A_I, A_E^T; A_E, -I / RHO_EQ]`,
/// which keeps the dynamics exact on every iterate.
struct Workspace<'a> {
    s: &'a Scaled,
    settings: &'a QpSettings,
    kinds: Vec<RowKind>,
    /// Position of each equality row among the KKT constraint indices.
    eq_slot: Vec<Option<usize>>,
    n_eq: usize,
    rho: Vec<f64>,
    rho_base: f64,
    kkt: SkylineLdl,
}

impl<'a> Workspace<'a> {
    fn new(s: &'a Scaled, settings: &'a QpSettings) -> Result<Self, QpError> {
        let kinds: Vec<RowKind> = s
            .l
            .iter()
            .zip(&s.u)
            .map(|(&lo, &hi)| {
                if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                    RowKind::Free
                } else if lo.is_finite() && hi.is_finite() && hi - lo <= EQ_TOL * (1.0 + lo.abs()) {
                    RowKind::Equality
                } else {
                    RowKind::Inequality
                }
            })
            .collect();
        let mut n_eq = 0;
        let eq_slot: Vec<Option<usize>> = kinds
            .iter()
            .map(|k| {
                (*k == RowKind::Equality).then(|| {
                    n_eq += 1;
                    n_eq - 1
                })
            })
            .collect();
        let n = s.q.len();
        let mut structure = Structure::new(n + n_eq);
        structure.pairs.extend((0..n + n_eq).map(|i| (i, i)));
        structure
            .pairs
            .extend(s.p.triplets().into_iter().map(|(i, j, _)| (i, j)));
        for r in 0..s.a.nrows {
            let cols = s.a.row(r).map(|(c, _)| c);
            match eq_slot[r] {
                Some(g) => structure.pairs.extend(cols.map(|c| (n + g, c))),
                None => {
                    let cols: Vec<usize> = cols.collect();
                    if cols.len() > 1 {
                        structure.cliques.push(cols);
                    }
                }
            }
        }
        let kkt = SkylineLdl::analyze_kkt(&structure, n);
        let rho_base = settings.rho.clamp(RHO_MIN, RHO_MAX);
        let mut ws = Self {
            s,
            settings,
            kinds,
            eq_slot,
            n_eq,
            rho: Vec::new(),
            rho_base,
            kkt,
        };
        ws.set_rho(rho_base)?;
        Ok(ws)
    }

    fn set_rho(&mut self, rho: f64) -> Result<(), LinalgError> {
        self.rho_base = rho;
        self.rho = self
            .kinds
            .iter()
            .map(|k| match k {
                RowKind::Free => RHO_MIN,
                RowKind::Inequality => rho,
                RowKind::Equality => RHO_EQ,
            })
            .collect();
        let s = self.s;
        let n = s.q.len();
        self.kkt.clear();
        for (i, j, v) in s.p.triplets() {
            if i >= j {
                self.kkt.add(i, j, v);
            }
        }
        for i in 0..n {
            self.kkt.add(i, i, self.settings.sigma);
        }
        let mut idx = Vec::new();
        let mut vals = Vec::new();
        for r in 0..s.a.nrows {
            match self.eq_slot[r] {
                Some(g) => {
                    for (c, v) in s.a.row(r) {
                        self.kkt.add(n + g, c, v);
                    }
                    self.kkt.add(n + g, n + g, -1.0 / RHO_EQ);
                }
                None => {
                    idx.clear();
                    vals.clear();
                    for (c, v) in s.a.row(r) {
                        idx.push(c);
                        vals.push(v);
                    }
                    self.kkt.add_outer(&idx, &vals, self.rho[r]);
                }
            }
        }
        self.kkt.factor()
    }

    /// Residuals of the unscaled problem at a scaled iterate.
    fn residuals(&self, x: &[f64], z: &[f64], y: &[f64]) -> Residuals {
        let s = self.s;
        let ax = s.a.mul_vec(x);
        let px = s.p.mul_vec(x);
        let aty = s.a.tr_mul_vec(y);
        let einv = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&s.e)
                .fold(0.0, |m: f64, (a, e)| m.max((a / e).abs()))
        };
        let dinv = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&s.d)
                .fold(0.0, |m: f64, (a, d)| m.max((a / d).abs()))
                / s.c
        };
        let prim_vec: Vec<f64> = ax.iter().zip(z).map(|(a, b)| a - b).collect();
        let dual_vec: Vec<f64> = (0..x.len()).map(|i| px[i] + s.q[i] + aty[i]).collect();
        let st = self.settings;
        let dual_scale = dinv(&px).max(dinv(&aty)).max(dinv(&s.q));
        let primal_scale = (0..z.len())
            .filter(|&i| self.kinds[i] != RowKind::Equality)
            .fold(0.0, |m: f64, i| {
                m.max((ax[i] / s.e[i]).abs()).max((z[i] / s.e[i]).abs())
            });
        Residuals {
            primal: einv(&prim_vec),
            dual: dinv(&dual_vec),
            eps_primal: st.eps_abs + st.eps_rel * einv(&ax).max(einv(z)),
            eps_dual: st.eps_abs + st.eps_rel * dual_scale,
            primal_scale,
            dual_scale,
        }
    }

    /// Penalty that balances the relative primal and dual residuals.
    fn rho_estimate(&self, res: &Residuals) -> f64 {
        let tiny = 1e-30;
        let primal = res.primal / (res.primal_scale + tiny);
        let dual = res.dual / (res.dual_scale + tiny);
        (self.rho_base * (primal / (dual + tiny)).sqrt()).clamp(RHO_MIN, RHO_MAX)
    }

    fn primal_infeasible(&self, dy: &[f64]) -> bool {
        let s = self.s;
        let norm = dy
            .iter()
            .zip(&s.e)
            .fold(0.0, |m: f64, (v, e)| m.max((v * e).abs()));
        if norm < 1e-30 {
            return false;
        }
        let eps = self.settings.eps_infeasible * norm;
        let aty = s.a.tr_mul_vec(dy);
        let aty_norm = aty
            .iter()
            .zip(&s.d)
            .fold(0.0, |m: f64, (v, d)| m.max((v / d).abs()));
        if aty_norm > eps {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let v = dy[i];
            if v > 0.0 {
                if s.u[i].is_infinite() {
                    if v * s.e[i] > eps {
                        return false;
                    }
                } else {
                    support += s.u[i] * v;
                }
            } else if v < 0.0 {
                if s.l[i].is_infinite() {
                    if -v * s.e[i] > eps {
                        return false;
                    }
                } else {
                    support += s.l[i] * v;
                }
            }
        }
        support < -eps
    }
}

/// Active-set guess extracted from an ADMM iterate.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ActiveSet {
    /// `(row, at_upper)`; equality rows are reported as upper.
    rows: Vec<(usize, bool)>,
}

/// Rows whose multiplier is below `eps_abs` (unscaled) are left out: with a
/// unique optimum a bound that binds with a zero multiplier can be dropped, and
/// keeping such degenerate rows makes the guess flicker between iterations.
fn active_set(ws: &Workspace, z: &[f64], y: &[f64]) -> ActiveSet {
    let s = ws.s;
    let rows = (0..z.len())
        .filter_map(|i| match ws.kinds[i] {
            RowKind::Free => None,
            RowKind::Equality => Some((i, true)),
            RowKind::Inequality => {
                let y_min = ws.settings.eps_abs * s.c / s.e[i];
                if s.l[i].is_finite() && z[i] - s.l[i] < -y[i] && y[i] < -y_min {
                    Some((i, false))
                } else if s.u[i].is_finite() && s.u[i] - z[i] < y[i] && y[i] > y_min {
                    Some((i, true))
                } else {
                    None
                }
            }
        })
        .collect();
    ActiveSet { rows }
}

/// Solves the equality-constrained problem on the guessed active set.
/// Single-variable active rows fix their variable and are eliminated; the rest
/// go into a regularized quasi-definite KKT system solved with iterative
/// refinement. Returns scaled `(x, y)`.
fn polish(ws: &Workspace, active: &ActiveSet) -> Option<(Vec<f64>, Vec<f64>)> {
    let s = ws.s;
    let n = s.q.len();
    let m = s.l.len();
    let mut fixed: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut general: Vec<(usize, f64)> = Vec::new();
    for &(r, upper) in &active.rows {
        let target = if upper { s.u[r] } else { s.l[r] };
        let mut entries = s.a.row(r);
        let single = match (entries.next(), entries.next()) {
            (Some(e), None) => Some(e),
            _ => None,
        };
        match single {
            Some((c, a)) if fixed[c].is_none() => fixed[c] = Some((r, target / a)),
            _ => general.push((r, target)),
        }
    }
    let free: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &j) in free.iter().enumerate() {
        pos[j] = k;
    }
    let nf = free.len();
    let dim = nf + general.len();

    let mut x = vec![0.0; n];
    for j in 0..n {
        if let Some((_, v)) = fixed[j] {
            x[j] = v;
        }
    }

    // Right-hand side with fixed variables moved across.
    let mut rhs = vec![0.0; dim];
    let px_fixed = s.p.mul_vec(&x);
    for (k, &j) in free.iter().enumerate() {
        rhs[k] = -s.q[j] - px_fixed[j];
    }
    for (g, &(r, target)) in general.iter().enumerate() {
        let mut b = target;
        for (c, a) in s.a.row(r) {
            if fixed[c].is_some() {
                b -= a * x[c];
            }
        }
        rhs[nf + g] = b;
    }

    let delta = ws.settings.polish_delta;
    let mut structure = Structure::new(dim);
    structure.pairs.extend((0..dim).map(|i| (i, i)));
    for (i, j, _) in s.p.triplets() {
        if pos[i] != usize::MAX && pos[j] != usize::MAX {
            structure.pairs.push((pos[i], pos[j]));
        }
    }
    for (g, &(r, _)) in general.iter().enumerate() {
        for (c, _) in s.a.row(r) {
            if pos[c] != usize::MAX {
                structure.pairs.push((nf + g, pos[c]));
            }
        }
    }
    let mut kkt = SkylineLdl::analyze(&structure);
    for (i, j, v) in s.p.triplets() {
        if i >= j && pos[i] != usize::MAX && pos[j] != usize::MAX {
            kkt.add(pos[i], pos[j], v);
        }
    }
    for k in 0..nf {
        kkt.add(k, k, delta);
    }
    for (g, &(r, _)) in general.iter().enumerate() {
        kkt.add(nf + g, nf + g, -delta);
        for (c, a) in s.a.row(r) {
            if pos[c] != usize::MAX {
                kkt.add(nf + g, pos[c], a);
            }
        }
    }
    kkt.factor().ok()?;

    // Unregularized KKT product for iterative refinement.
    let kkt_mul = |v: &[f64]| -> Vec<f64> {
        let mut xf = vec![0.0; n];
        for (k, &j) in free.iter().enumerate() {
            xf[j] = v[k];
        }
        let pxf = s.p.mul_vec(&xf);
        let mut out = vec![0.0; dim];
        for (k, &j) in free.iter().enumerate() {
            out[k] = pxf[j];
        }
        for (g, &(r, _)) in general.iter().enumerate() {
            let yg = v[nf + g];
            let mut row = 0.0;
            for (c, a) in s.a.row(r) {
                if pos[c] != usize::MAX {
                    out[pos[c]] += a * yg;
                    row += a * v[pos[c]];
                }
            }
            out[nf + g] = row;
        }
        out
    };
    let mut sol = kkt.solve(&rhs);
    for _ in 0..ws.settings.polish_refine_iters {
        let kv = kkt_mul(&sol);
        let res: Vec<f64> = rhs.iter().zip(&kv).map(|(a, b)| a - b).collect();
        if inf_norm(&res) <= 1e-15 * (1.0 + inf_norm(&rhs)) {
            break;
        }
        let corr = kkt.solve(&res);
        sol.iter_mut().zip(&corr).for_each(|(a, b)| *a += b);
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for (k, &j) in free.iter().enumerate() {
        x[j] = sol[k];
    }
    let mut y = vec![0.0; m];
    for (g, &(r, _)) in general.iter().enumerate() {
        y[r] = sol[nf + g];
    }
    // Multipliers of the eliminated rows from stationarity at the fixed variables.
    let px = s.p.mul_vec(&x);
    let aty = s.a.tr_mul_vec(&y);
    for j in 0..n {
        if let Some((r, _)) = fixed[j] {
            let a = s.a.get(r, j);
            y[r] = -(px[j] + s.q[j] + aty[j]) / a;
        }
    }
    Some((x, y))
}

/// Polishes on `active`, then on the guess grown by the rows the polished
/// point violates, for up to [`POLISH_ROUNDS`] solves. Returns scaled
/// `(x, y, z)` of the first accepted point.
fn polish_rounds(
    ws: &Workspace,
    active: &ActiveSet,
    iter: usize,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let s = ws.s;
    let mut guess = active.clone();
    for _ in 0..POLISH_ROUNDS {
        let (px, py) = polish(ws, &guess)?;
        let ax = s.a.mul_vec(&px);
        let pz: Vec<f64> = ax
            .iter()
            .enumerate()
            .map(|(i, &v)| project(v, s.l[i], s.u[i]))
            .collect();
        let res = ws.residuals(&px, &pz, &py);
        let signs = signs_consistent(ws, &guess, &px, &py);
        log::trace!(
            "polish at {iter}: {} active, primal {:.3e}/{:.3e} dual {:.3e}/{:.3e} signs {signs}",
            guess.rows.len(),
            res.primal,
            res.eps_primal,
            res.dual,
            res.eps_dual
        );
        if res.near(POLISH_ACCEPT) && signs {
            return Some((px, py, pz));
        }
        if !signs {
            return None;
        }
        let tol = POLISH_ACCEPT * res.eps_primal;
        let before = guess.rows.len();
        for i in 0..ax.len() {
            if ws.kinds[i] != RowKind::Inequality || guess.rows.iter().any(|&(r, _)| r == i) {
                continue;
            }
            if (s.l[i] - ax[i]) / s.e[i] > tol {
                guess.rows.push((i, false));
            } else if (ax[i] - s.u[i]) / s.e[i] > tol {
                guess.rows.push((i, true));
            }
        }
        if guess.rows.len() == before {
            return None;
        }
        guess.rows.sort_unstable();
    }
    None
}

/// Multiplier signs must match the side of the active bound. A wrong-signed
/// multiplier is tolerated only if its contribution to the gradient,
/// `|y_r| * ||a_r||`, is below the dual tolerance.
fn signs_consistent(ws: &Workspace, active: &ActiveSet, x: &[f64], y: &[f64]) -> bool {
    let s = ws.s;
    let px = s.p.mul_vec(x);
    let grad = px
        .iter()
        .zip(&s.q)
        .zip(&s.d)
        .fold(0.0, |m: f64, ((p, q), d)| {
            m.max((p / d).abs()).max((q / d).abs())
        })
        / s.c;
    let tol = ws.settings.eps_abs + ws.settings.eps_rel * grad;
    active.rows.iter().all(|&(r, upper)| {
        let norm =
            s.a.row(r)
                .fold(0.0, |m: f64, (c, v)| m.max((v / (s.e[r] * s.d[c])).abs()));
        let effect = y[r] * s.e[r] / s.c * norm;
        match ws.kinds[r] {
            RowKind::Equality => true,
            _ if upper => effect >= -tol,
            _ => effect <= tol,
        }
    })
}

fn project(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

pub fn solve(
    problem: &QpProblem,
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> Result<QpResult, QpError> {
    problem.validate()?;
    let (n, m) = (problem.n_vars(), problem.n_rows());
    let s = equilibrate(problem, settings.scaling_iters);
    let mut ws = Workspace::new(&s, settings)?;

    let (mut x, mut y) = match warm {
        Some(w) if w.x.len() == n && w.y.len() == m => (
            w.x.iter().zip(&s.d).map(|(v, d)| v / d).collect::<Vec<_>>(),
            w.y.iter()
                .zip(&s.e)
                .map(|(v, e)| v * s.c / e)
                .collect::<Vec<_>>(),
        ),
        Some(_) => {
            return Err(QpError::Dimension(
                "warm start does not match the problem".into(),
            ))
        }
        None => (vec![0.0; n], vec![0.0; m]),
    };
    let mut z: Vec<f64> =
        s.a.mul_vec(&x)
            .into_iter()
            .enumerate()
            .map(|(i, v)| project(v, s.l[i], s.u[i]))
            .collect();

    let alpha = settings.alpha;
    let mut rhs = vec![0.0; n + ws.n_eq];
    let mut tmp_m = vec![0.0; m];
    let mut tmp_n = vec![0.0; n];
    let mut z_tilde = vec![0.0; m];
    let mut dy = vec![0.0; m];
    let mut status = QpStatus::MaxIterations;
    let mut polished = false;
    let mut last_polish: Option<ActiveSet> = None;
    let mut iterations = 0;

    for iter in 1..=settings.max_iter {
        iterations = iter;
        for i in 0..m {
            tmp_m[i] = match ws.eq_slot[i] {
                Some(g) => {
                    rhs[n + g] = s.l[i] - y[i] / RHO_EQ;
                    0.0
                }
                None => ws.rho[i] * z[i] - y[i],
            };
        }
        s.a.tr_mul_vec_into(&tmp_m, &mut tmp_n);
        for j in 0..n {
            rhs[j] = settings.sigma * x[j] - s.q[j] + tmp_n[j];
        }
        let sol = ws.kkt.solve(&rhs);
        let x_tilde = &sol[..n];
        s.a.mul_vec_into(x_tilde, &mut z_tilde);
        for j in 0..n {
            x[j] = alpha * x_tilde[j] + (1.0 - alpha) * x[j];
        }
        for i in 0..m {
            if let Some(g) = ws.eq_slot[i] {
                dy[i] = alpha * (sol[n + g] - y[i]);
                y[i] += dy[i];
                z[i] = s.l[i];
                continue;
            }
            let z_relaxed = alpha * z_tilde[i] + (1.0 - alpha) * z[i];
            let z_next = project(z_relaxed + y[i] / ws.rho[i], s.l[i], s.u[i]);
            dy[i] = ws.rho[i] * (z_relaxed - z_next);
            y[i] += dy[i];
            z[i] = z_next;
        }

        if iter % settings.check_interval == 0 || iter == settings.max_iter {
            let res = ws.residuals(&x, &z, &y);
            log::trace!(
                "iter {iter}: primal {:.3e}/{:.3e} dual {:.3e}/{:.3e} rho {:.3e}",
                res.primal,
                res.eps_primal,
                res.dual,
                res.eps_dual,
                ws.rho_base
            );
            if res.converged() && !settings.polish {
                status = QpStatus::Optimal;
                break;
            }
            if settings.polish && res.near(settings.polish_trigger) {
                let active = active_set(&ws, &z, &y);
                if last_polish.as_ref() != Some(&active) {
                    if let Some((px, py, pz)) = polish_rounds(&ws, &active, iter) {
                        x = px;
                        y = py;
                        z = pz;
                        polished = true;
                        status = QpStatus::Optimal;
                        break;
                    }
                    last_polish = Some(active);
                }
            }
            if res.converged() {
                status = QpStatus::Optimal;
                break;
            }
            if ws.primal_infeasible(&dy) {
                status = QpStatus::PrimalInfeasible;
                break;
            }
        }
        if settings.adaptive_rho && iter % settings.adaptive_rho_interval == 0 {
            let estimate = ws.rho_estimate(&ws.residuals(&x, &z, &y));
            if estimate > 5.0 * ws.rho_base || estimate < 0.2 * ws.rho_base {
                ws.set_rho(estimate)?;
            }
        }
    }

    let res = ws.residuals(&x, &z, &y);
    let x_out: Vec<f64> = x.iter().zip(&s.d).map(|(v, d)| v * d).collect();
    let y_out: Vec<f64> = y.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect();
    let objective = problem.objective(&x_out);
    Ok(QpResult {
        x: x_out,
        y: y_out,
        objective,
        status,
        iterations,
        primal_residual: res.primal,
        dual_residual: res.dual,
        polished,
    })
}
