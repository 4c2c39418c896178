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

//! Parametric sensitivities of a solved QP at a fixed active set.

use nalgebra::{DMatrix, DVector};

use super::{SolveResult, SolverError};

/// Gradient of the optimal value with respect to parameters.
///
/// `dlagrangian` returns the parameter gradient of the Lagrangian
/// `f(y) + λ_eqᵀ(A_eq y − b_eq) + μᵀ(A_in y − b_in)` evaluated at the given
/// primal-dual point, which the envelope theorem identifies with the value
/// gradient.
pub fn objective_sensitivity<F>(res: &SolveResult, dlagrangian: F) -> Result<DVector<f64>, SolverError>
where
    F: FnOnce(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    if !res.strict_complementarity {
        let m = if res.min_active_multiplier.is_finite() { res.min_active_multiplier } else { 0.0 };
        return Err(SolverError::WeakActivation(m));
    }
    Ok(dlagrangian(&res.y_star, &res.lambda_eq, &res.mu_in))
}

/// Primal and working-set multiplier derivatives, one column per parameter.
#[derive(Clone, Debug)]
pub struct SolutionSensitivity {
    pub dy: DMatrix<f64>,
    /// Rows follow `res.kkt_factorization.row_ids()`.
    pub dlambda: DMatrix<f64>,
}

/// Solves `K [dy; dλ] = −∂r/∂θ` with the stored factorization, where
/// `r = [∇f + Aᵀλ; A y − b]` is the KKT residual restricted to the working
/// rows. `dr_dtheta` has `n + |working set|` rows.
pub fn solution_sensitivity(res: &SolveResult, dr_dtheta: &DMatrix<f64>) -> Result<SolutionSensitivity, SolverError> {
    let f = &res.kkt_factorization;
    let n = f.n_vars();
    let m = f.row_ids().len();
    if dr_dtheta.nrows() != n + m {
        return Err(SolverError::DimensionMismatch(format!("dr_dtheta has {} rows, expected {}", dr_dtheta.nrows(), n + m)));
    }
    let p = dr_dtheta.ncols();
    let mut dy = DMatrix::zeros(n, p);
    let mut dlambda = DMatrix::zeros(m, p);
    for c in 0..p {
        let col = dr_dtheta.column(c);
        let r1 = -col.rows(0, n).into_owned();
        let r2 = -col.rows(n, m).into_owned();
        let (y, l) = f.solve(&r1, &r2)?;
        dy.set_column(c, &y);
        dlambda.set_column(c, &l);
    }
    Ok(SolutionSensitivity { dy, dlambda })
}
