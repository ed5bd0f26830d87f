//! Sparse primal-dual interior-point solver for convex QCQPs with diagonal
//! quadratic constraints.
//!
//! Problems have the form
//!
//! ```text
//! minimise   xᵀHx + gᵀx + c
//! subject to aᵢᵀx  = bᵢ
//!            aⱼᵀx ≤ bⱼ
//!            xᵀQₖx + aₖᵀx ≤ bₖ      (Qₖ diagonal, nonnegative)
//! ```

mod ipm;
mod ldl;
mod ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipm::{solve, solve_from};
pub use ldl::{Factor, Symbolic};
pub use ordering::minimum_degree;

/// Sparse row `Σ val[k] · x[idx[k]]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        SparseRow::default()
    }

    pub fn push(mut self, i: usize, v: f64) -> Self {
        self.idx.push(i);
        self.val.push(v);
        self
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }

    /// `out += alpha · aᵀ`.
    pub fn axpy(&self, alpha: f64, out: &mut [f64]) {
        for (&i, v) in self.idx.iter().zip(&self.val) {
            out[i] += alpha * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub a: SparseRow,
    pub b: f64,
    #[serde(default)]
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadRow {
    /// Diagonal of `Q` as `(index, value)` pairs.
    pub q: Vec<(usize, f64)>,
    pub a: SparseRow,
    pub b: f64,
    #[serde(default)]
    pub tag: String,
}

impl QuadRow {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.q.iter().map(|&(i, v)| v * x[i] * x[i]).sum::<f64>() + self.a.dot(x) - self.b
    }
}

/// Standard-form problem. `hessian` holds the upper triangle of `H` as
/// `(row, col, value)` with `row <= col`; duplicates are summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcqpProblem {
    pub n_vars: usize,
    pub hessian: Vec<(usize, usize, f64)>,
    pub g: Vec<f64>,
    pub c: f64,
    pub eq: Vec<LinearRow>,
    pub ineq: Vec<LinearRow>,
    pub quad: Vec<QuadRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub var_names: Vec<String>,
}

impl QcqpProblem {
    pub fn new(n_vars: usize) -> Self {
        QcqpProblem {
            n_vars,
            hessian: Vec::new(),
            g: vec![0.0; n_vars],
            c: 0.0,
            eq: Vec::new(),
            ineq: Vec::new(),
            quad: Vec::new(),
            var_names: Vec::new(),
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.c + self.g.iter().zip(x).map(|(g, x)| g * x).sum::<f64>();
        for &(i, j, h) in &self.hessian {
            v += if i == j { h * x[i] * x[i] } else { 2.0 * h * x[i] * x[j] };
        }
        v
    }

    /// `2Hx + g`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.g.clone();
        for &(i, j, h) in &self.hessian {
            out[i] += 2.0 * h * x[j];
            if i != j {
                out[j] += 2.0 * h * x[i];
            }
        }
        out
    }

    pub fn check(&self) -> Result<(), SolverError> {
        let n = self.n_vars;
        let bad = |m: String| Err(SolverError::InvalidProblem(m));
        if self.g.len() != n {
            return bad(format!("linear term has length {}, expected {}", self.g.len(), n));
        }
        if !self.c.is_finite() || self.g.iter().any(|v| !v.is_finite()) {
            return bad("non-finite objective".into());
        }
        for &(i, j, h) in &self.hessian {
            if i > j || j >= n || !h.is_finite() {
                return bad(format!("invalid hessian entry ({}, {}, {})", i, j, h));
            }
        }
        let rows = self.eq.iter().chain(&self.ineq).map(|r| (&r.a, r.b, &r.tag));
        for (a, b, tag) in rows.chain(self.quad.iter().map(|r| (&r.a, r.b, &r.tag))) {
            if a.idx.len() != a.val.len() || a.idx.iter().any(|&i| i >= n) {
                return bad(format!("malformed row '{}'", tag));
            }
            if !b.is_finite() || a.val.iter().any(|v| !v.is_finite()) {
                return bad(format!("non-finite data in row '{}'", tag));
            }
        }
        for r in &self.quad {
            if r.q.iter().any(|&(i, v)| i >= n || !(v >= 0.0) || !v.is_finite()) {
                return bad(format!("quadratic row '{}' is not convex diagonal", r.tag));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
    /// Lower bound on the centering parameter of the corrector step.
    pub barrier_decrease: f64,
    /// Static diagonal shift of the KKT matrix.
    pub regularization: f64,
    /// Accept a non-convex objective and converge to a stationary point,
    /// correcting the KKT inertia when required.
    pub allow_indefinite: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            max_iter: 100,
            barrier_decrease: 1e-6,
            regularization: 1e-9,
            allow_indefinite: false,
        }
    }
}

impl SolverConfig {
    fn check(&self) -> Result<(), SolverError> {
        if !(self.tol_gap > 0.0 && self.tol_feas > 0.0 && self.max_iter >= 1 && self.regularization >= 0.0) {
            return Err(SolverError::InvalidProblem("solver tolerances must be positive and max_iter >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Complementarity `sᵀz / m`, scaled by `1 + |f|`.
    pub final_gap: f64,
    /// Largest scaled primal or dual residual.
    pub final_feas: f64,
    pub runtime_seconds: f64,
    /// Unscaled residuals of the returned iterate.
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub inertia_corrections: usize,
}

/// Solver output. `y` holds equality multipliers in row order with the
/// convention `y = ∂f*/∂b`; `z` holds linear then quadratic inequality
/// multipliers (nonnegative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub objective: f64,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("objective is not convex (pivot {pivot:.3e})")]
    NonConvex { pivot: f64 },
    #[error("KKT factorization failed at iteration {iteration}: {detail}")]
    Factorization { iteration: usize, detail: String },
    #[error("solver finished with status {status:?} after {iterations} iterations")]
    NotOptimal { status: Status, iterations: usize },
}

/// Whether the symmetric matrix given by its upper triangle is positive
/// semidefinite, judged by an `LDLᵀ` factorization after a shift of
/// `rel_tol · (1 + max |h|)`. Returns the smallest pivot.
pub fn psd_check(n: usize, upper: &[(usize, usize, f64)], rel_tol: f64) -> (bool, f64) {
    if n == 0 {
        return (true, 0.0);
    }
    let scale = upper.iter().fold(0.0f64, |m, t| m.max(t.2.abs()));
    let shift = rel_tol * (1.0 + scale);
    let mut entries: Vec<(usize, usize, f64)> = upper.to_vec();
    entries.extend((0..n).map(|i| (i, i, shift)));
    let pattern: Vec<(usize, usize)> = entries.iter().map(|t| (t.0, t.1)).collect();
    let sym = Symbolic::analyse(n, &pattern);
    let values: Vec<f64> = entries.iter().map(|t| t.2).collect();
    let f = sym.factor(&values, &vec![1.0; n], 0.0, 0.0);
    let min = f.pivots().iter().copied().fold(f64::INFINITY, f64::min);
    (min > 0.0, min - shift)
}
