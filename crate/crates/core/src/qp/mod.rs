//! Convex quadratic programs of the form
//!
//! ```text
//! minimize    1/2 x^T P x + q^T x
//! subject to  l <= A x <= u
//! ```
//!
//! solved by an operator-splitting (ADMM) method with equilibration, adaptive
//! penalty, and active-set polishing. Equalities are rows with `l == u`.

mod admm;
pub mod csr;
pub mod ldl;

use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub use admm::solve;
pub use csr::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("row {row}: lower bound {lower} exceeds upper bound {upper}")]
    Bounds { row: usize, lower: f64, upper: f64 },
    #[error("cost matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] ldl::LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric positive semidefinite cost matrix, both triangles stored.
    pub p: CsrMatrix,
    pub q: Vec<f64>,
    pub a: CsrMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    /// Row scaling chosen by the caller. When set it replaces the automatic
    /// row equilibration; columns and cost are still equilibrated. The solver
    /// penalizes row `r` with weight proportional to `row_scale[r]^2`, so rows
    /// that the free directions barely move should get large scales.
    pub row_scale: Option<Vec<f64>>,
}

impl QpProblem {
    pub fn new(p: CsrMatrix, q: Vec<f64>, a: CsrMatrix, l: Vec<f64>, u: Vec<f64>) -> Self {
        Self {
            p,
            q,
            a,
            l,
            u,
            row_scale: None,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_rows(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        let m = self.n_rows();
        let dim = |what: &str| Err(QpError::Dimension(what.to_string()));
        if self.p.nrows != n || self.p.ncols != n {
            return dim("P must be n x n");
        }
        if self.a.ncols != n || self.a.nrows != m || self.u.len() != m {
            return dim("A must be m x n with l, u of length m");
        }
        if let Some(scale) = &self.row_scale {
            if scale.len() != m {
                return dim("row scale must have length m");
            }
            if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return dim("row scales must be positive and finite");
            }
        }
        for (row, (&lower, &upper)) in self.l.iter().zip(&self.u).enumerate() {
            if lower > upper || lower.is_nan() || upper.is_nan() {
                return Err(QpError::Bounds { row, lower, upper });
            }
        }
        for (i, j, v) in self.p.triplets() {
            if (self.p.get(j, i) - v).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(QpError::Asymmetric(i, j));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    /// Worst violation of `l <= A x <= u`.
    pub fn constraint_violation(&self, x: &[f64]) -> f64 {
        self.a
            .mul_vec(x)
            .iter()
            .zip(self.l.iter().zip(&self.u))
            .map(|(&ax, (&lo, &hi))| (lo - ax).max(ax - hi).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Writes `P.txt`, `A.txt` (one `i j value` per line) and `q.txt`, `l.txt`,
    /// `u.txt` (one value per line) into `dir`.
    pub fn write_triplets(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.p
            .write_triplets(io::BufWriter::new(std::fs::File::create(
                dir.join("P.txt"),
            )?))?;
        self.a
            .write_triplets(io::BufWriter::new(std::fs::File::create(
                dir.join("A.txt"),
            )?))?;
        for (name, v) in [("q.txt", &self.q), ("l.txt", &self.l), ("u.txt", &self.u)] {
            let mut out = io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            for x in v.iter() {
                writeln!(out, "{x:e}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Tolerance of the primal infeasibility certificate.
    pub eps_infeasible: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in `(0, 2)`.
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iters: usize,
    /// Polishing is attempted once residuals are within this factor of the tolerances.
    pub polish_trigger: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-6,
            max_iter: 20_000,
            eps_infeasible: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            check_interval: 5,
            polish: true,
            polish_delta: 1e-9,
            polish_refine_iters: 10,
            polish_trigger: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    PrimalInfeasible,
}

/// Primal and dual starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub x: Vec<f64>,
    /// Constraint multipliers (negative at active lower bounds, positive at upper).
    pub y: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}
