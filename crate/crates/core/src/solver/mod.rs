//   Copyright 2026 tube-rl developers
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.

//! Dense convex QP/LP solver.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 y' H y + g' y + constant
//!     subject to   A_eq y  = b_eq
//!                  A_in y <= b_in
//! ```
//!
//! with a primal active-set method. `H` only needs to be positive
//! semidefinite, so linear programs are the special case `H = 0`. The method
//! keeps the working set as a null-space factorization ([`KktFactorization`])
//! that is returned with the solution and reused for parametric
//! sensitivities.

mod active_set;
mod factor;
mod sensitivity;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use factor::{KktFactorization, RowId};
pub use sensitivity::{objective_sensitivity, solution_sensitivity, SolutionSensitivity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("objective is unbounded below")]
    Unbounded,
    #[error("iteration limit reached after {0} iterations")]
    MaxIterations(usize),
    #[error("strict complementarity fails (smallest active multiplier {0:e})")]
    WeakActivation(f64),
    #[error("KKT matrix is singular for the active set")]
    SingularKkt,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// A convex quadratic program in the form documented at module level.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with the given cost.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            constant: 0.0,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    /// Linear program `min g' y`.
    pub fn linear_program(linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self::new(DMatrix::zeros(n, n), linear)
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_inequalities(mut self, a_in: DMatrix<f64>, b_in: DVector<f64>) -> Self {
        self.a_in = a_in;
        self.b_in = b_in;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        0.5 * y.dot(&(&self.hessian * y)) + self.linear.dot(y) + self.constant
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n_vars();
        let bad = |what: &str| Err(SolverError::DimensionMismatch(what.to_string()));
        if self.hessian.shape() != (n, n) {
            return bad("hessian must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality block");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return bad("inequality block");
        }
        Ok(())
    }

    /// Largest violation of any constraint at `y` (zero when feasible).
    pub fn max_violation(&self, y: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * y - &self.b_eq).amax();
        let ineq = (&self.a_in * y - &self.b_in).iter().fold(0.0_f64, |m, &v| m.max(v));
        eq.max(ineq)
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    /// Defaults to `10 * (n_vars + n_constraints)`.
    pub max_iterations: Option<usize>,
    /// Active multipliers below this value flag a strict-complementarity
    /// failure.
    pub strict_complementarity_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { feasibility_tol: 1e-9, optimality_tol: 1e-9, max_iterations: None, strict_complementarity_tol: 1e-7 }
    }
}

/// Optional starting information.
///
/// `active_set` lists inequality indices guessed active at the solution; the
/// solver starts from the minimizer on that working set when it is feasible.
/// `point` is a primal guess used when it is feasible. Otherwise a phase-one
/// LP finds a feasible start.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    pub active_set: Option<Vec<usize>>,
    pub point: Option<DVector<f64>>,
}

impl WarmStart {
    pub fn from_active_set(active_set: Vec<usize>) -> Self {
        Self { active_set: Some(active_set), point: None }
    }

    pub fn from_point(point: DVector<f64>) -> Self {
        Self { active_set: None, point: Some(point) }
    }
}

/// Primal-dual solution with the factorization of the final working set.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub y_star: DVector<f64>,
    /// Equality multipliers, sign convention `∇f + A_eqᵀλ + A_inᵀμ = 0`.
    pub lambda_eq: DVector<f64>,
    /// Inequality multipliers, nonnegative, zero for inactive rows.
    pub mu_in: DVector<f64>,
    /// Inequality indices in the final working set.
    pub active_set: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Infinity norm of stationarity and primal residuals.
    pub kkt_residual: f64,
    /// `Σ |μ_i (b_i - a_i y)|`.
    pub complementarity_gap: f64,
    pub strict_complementarity: bool,
    /// Smallest multiplier over the working inequalities (`inf` if none).
    pub min_active_multiplier: f64,
    /// Gradients of all constraints active at the solution are independent.
    pub licq: bool,
    pub kkt_factorization: KktFactorization,
}

impl SolveResult {
    pub fn is_active(&self, ineq: usize) -> bool {
        self.active_set.contains(&ineq)
    }
}

/// Solves `qp` with default options.
pub fn solve(qp: &QpProblem, warm_start: Option<&WarmStart>) -> Result<SolveResult, SolverError> {
    solve_with(qp, warm_start, &SolverOptions::default())
}

pub fn solve_with(qp: &QpProblem, warm_start: Option<&WarmStart>, opts: &SolverOptions) -> Result<SolveResult, SolverError> {
    qp.validate()?;
    active_set::ActiveSet::new(qp, opts).solve(warm_start)
}

/// Rebuilds the KKT factorization of `result`'s working set from scratch.
pub fn refactorize(qp: &QpProblem, result: &SolveResult) -> Result<KktFactorization, SolverError> {
    active_set::refactor(qp, result)
}
