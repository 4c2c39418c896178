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

//! Constraint tightening for tube MPC.
//!
//! With error feedback `a = u - K e` the error obeys `e+ = A_K e + w`, where
//! `A_K = A - B K` and `C_K = C - D K`. Constraint row `r` at stage `k` is
//! tightened by `d_{r,k} = Σ_{j<k} h_W(C_K,r A_K^j)`, with `h_W` the support
//! function of the disturbance set. Each summand is one small LP that is
//! shared by every stage and by the terminal rows.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::polytope::{FacetPolytope, PolytopeError};
use crate::solver::{self, QpProblem, SolverError, WarmStart};

mod profile;

pub use profile::{build_profile, ProfileInput, ProfileStructure, SensitivitySelection, TighteningProfile};

/// Largest finite-determination index tried before giving up.
pub const MAX_K_PRIME: usize = 200;
/// Slack below which a support LP counts as touching the bound.
pub const REDUNDANCY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TighteningError {
    #[error("closed loop A - BK is not Schur stable (spectral radius {0})")]
    UnstableClosedLoop(f64),
    #[error("invariant set not finitely determined within {0} steps")]
    NotFinitelyDetermined(usize),
    #[error("tightened terminal set is empty")]
    EmptyTerminalSet,
    #[error("support LP lacks strict complementarity")]
    WeakActivation,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

impl From<SolverError> for TighteningError {
    fn from(e: SolverError) -> Self {
        Self::Polytope(e.into())
    }
}

/// `(A - BK, C - DK)`.
pub fn closed_loop(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    (a - b * k, c - d * k)
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn check_stable(a_k: &DMatrix<f64>) -> Result<(), TighteningError> {
    let rho = spectral_radius(a_k);
    if rho >= 1.0 - 1e-10 {
        return Err(TighteningError::UnstableClosedLoop(rho));
    }
    Ok(())
}

/// Stage tightenings `d_0..d_N` for the rows of `C s + D a + c̄ <= 0`.
///
/// Stability is not required here: every `d_k` is a finite sum. The terminal
/// set construction is where an unstable `A_K` is rejected.
pub fn tighten_stage(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    k: &DMatrix<f64>,
    w: &FacetPolytope,
    horizon: usize,
) -> Result<Vec<DVector<f64>>, TighteningError> {
    let (a_k, c_k) = closed_loop(a, b, c, d, k);
    let mut table = profile::SummandTable::new(a_k, c_k, w, false);
    table.ensure(horizon)?;
    Ok((0..=horizon).map(|k| table.prefix(k)).collect())
}

/// Stacked terminal rows `G = [C_K; C_K A_K; ...; C_K A_K^{k'-1}]` and
/// `ḡ = [c_0; ...; c_{k'-1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalSet {
    pub g: DMatrix<f64>,
    pub g_bar: DVector<f64>,
    pub k_prime: usize,
}

/// Finitely determined set `{x | C_K A_K^l x + c_l <= 0, l >= 0}`.
///
/// `c_profile(l)` returns the offset vector for level `l`. `k'` is the
/// smallest count of levels after which every row of the next level is
/// redundant.
pub fn terminal_set<F>(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    k: &DMatrix<f64>,
    mut c_profile: F,
) -> Result<TerminalSet, TighteningError>
where
    F: FnMut(usize) -> Result<DVector<f64>, TighteningError>,
{
    let (a_k, c_k) = closed_loop(a, b, c, d, k);
    check_stable(&a_k)?;
    let n = a.nrows();
    let nc = c_k.nrows();
    let mut g = DMatrix::zeros(0, n);
    let mut g_bar = DVector::zeros(0);
    let mut level = c_k.clone();
    for kp in 0..=MAX_K_PRIME {
        let cl = c_profile(kp)?;
        if kp > 0 && all_redundant(&g, &g_bar, &level, &cl)? {
            return Ok(TerminalSet { g, g_bar, k_prime: kp });
        }
        if kp == MAX_K_PRIME {
            break;
        }
        g = stack_rows(&g, &level);
        g_bar = stack_vec(&g_bar, &cl);
        level = &level * &a_k;
        debug_assert_eq!(level.nrows(), nc);
    }
    Err(TighteningError::NotFinitelyDetermined(MAX_K_PRIME))
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), bottom.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

fn stack_vec(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}

/// Whether every row of `rows x + c <= 0` is implied by `g x + g_bar <= 0`.
/// An empty set `g x + g_bar <= 0` is reported as an error.
fn all_redundant(g: &DMatrix<f64>, g_bar: &DVector<f64>, rows: &DMatrix<f64>, c: &DVector<f64>) -> Result<bool, TighteningError> {
    let set = FacetPolytope::new(g.clone(), -g_bar)?;
    let mut warm: Option<WarmStart> = None;
    for r in 0..rows.nrows() {
        let dir = rows.row(r).transpose();
        match set.support_warm(&dir, warm.as_ref()) {
            Ok(s) => {
                if s.value + c[r] > REDUNDANCY_TOL {
                    return Ok(false);
                }
                warm = Some(WarmStart::from_active_set(s.active_set));
            }
            Err(PolytopeError::Unbounded) => return Ok(false),
            Err(PolytopeError::Infeasible) => return Err(TighteningError::EmptyTerminalSet),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Terminal tightening `h_i = Σ_{j<horizon} h_W(G_i A_K^j)`.
pub fn tighten_terminal(
    g: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    w: &FacetPolytope,
    horizon: usize,
) -> Result<DVector<f64>, TighteningError> {
    let a_k = a - b * k;
    let mut table = profile::SummandTable::new(a_k, g.clone(), w, false);
    table.ensure(horizon)?;
    Ok(table.prefix(horizon))
}

/// Reduced rows, offsets and the kept row indices.
pub type Reduced = (DMatrix<f64>, DVector<f64>, Vec<usize>);

/// Drops duplicate rows, then rows whose support over the remaining rows is
/// strictly inside their bound.
pub fn remove_redundant(g: &DMatrix<f64>, gv: &DVector<f64>) -> Result<Reduced, TighteningError> {
    let n = g.nrows();
    let mut kept: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let dup = kept.iter().any(|&j| {
            let scale = 1.0 + g.row(i).amax() + gv[i].abs();
            (g.row(i) - g.row(j)).amax() <= 1e-12 * scale && (gv[i] - gv[j]).abs() <= 1e-12 * scale
        });
        if !dup {
            kept.push(i);
        }
    }
    let mut pos = 0;
    while pos < kept.len() {
        let i = kept[pos];
        let others: Vec<usize> = kept.iter().copied().filter(|&j| j != i).collect();
        let a_in = DMatrix::from_fn(others.len(), g.ncols(), |r, c| g[(others[r], c)]);
        let b_in = DVector::from_fn(others.len(), |r, _| -gv[others[r]]);
        let qp = QpProblem::linear_program(-g.row(i).transpose()).with_inequalities(a_in, b_in);
        let redundant = match solver::solve(&qp, None) {
            Ok(r) => -r.objective < -gv[i] - REDUNDANCY_TOL,
            Err(SolverError::Unbounded) => false,
            Err(SolverError::Infeasible) => return Err(TighteningError::EmptyTerminalSet),
            Err(e) => return Err(e.into()),
        };
        if redundant {
            kept.remove(pos);
        } else {
            pos += 1;
        }
    }
    let g_red = DMatrix::from_fn(kept.len(), g.ncols(), |r, c| g[(kept[r], c)]);
    let g_vec = DVector::from_fn(kept.len(), |r, _| gv[kept[r]]);
    Ok((g_red, g_vec, kept))
}

#[cfg(test)]
mod tests;
