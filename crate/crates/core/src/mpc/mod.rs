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

//! Robust MPC used as the Q-function approximator.
//!
//! `Q(s, a)` solves the tube MPC with `u_0 = a`; `V(s)` and the policy come
//! from the same problem with `u_0` free. Parameter gradients are the
//! parameter gradients of the QP Lagrangian at the optimal primal-dual pair,
//! chained through the tightening sensitivities.

mod params;
mod qp;

use log::warn;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::solver::{self, SolveResult, SolverError, WarmStart};
use crate::tightening::{TighteningError, TighteningProfile};

pub use params::{MpcParams, ParamGroup, ThetaSelection};
pub use qp::{build_qp, Exploration, MpcQp, Reference};

/// Slack sum treated as zero.
pub const SLACK_TOL: f64 = 1e-8;
/// Maximum number of penalty doublings per evaluation.
pub const MAX_RHO_DOUBLINGS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
}

/// Value, action and gradients from one MPC solve.
#[derive(Clone, Debug)]
pub struct PolicyEval {
    /// Optimal QP objective: `Q` when the action was pinned, `V` otherwise.
    pub value: f64,
    /// `u_0` of the optimal plan.
    pub action: DVector<f64>,
    /// Gradient over the selected θ entries; `None` when not requested or
    /// when strict complementarity fails.
    pub grad: Option<DVector<f64>>,
    pub slack_total: f64,
    pub feasible_unrelaxed: bool,
    pub weak_activation: bool,
    pub licq: bool,
    /// Penalty weight actually used (after any doubling).
    pub rho: f64,
    /// Predicted nominal states `x_0..x_N`.
    pub states: Vec<DVector<f64>>,
    /// Input plan `u_0..u_{N-1}` stacked.
    pub plan: DVector<f64>,
    pub active_set: Vec<usize>,
}

/// Optional inputs to an evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions<'a> {
    /// Compute the gradient over these entries.
    pub selection: Option<&'a ThetaSelection>,
    /// Previous input plan; shifted by the caller if desired.
    pub plan: Option<&'a DVector<f64>>,
    /// Previous active set of a QP with the same layout.
    pub active_set: Option<&'a [usize]>,
}

/// Tube MPC for a fixed parameter and tightening profile.
#[derive(Clone, Copy, Debug)]
pub struct Mpc<'a> {
    pub params: &'a MpcParams,
    pub profile: &'a TighteningProfile,
}

impl<'a> Mpc<'a> {
    pub fn new(params: &'a MpcParams, profile: &'a TighteningProfile) -> Self {
        Self { params, profile }
    }

    /// `Q(s, a)`.
    pub fn eval_q(
        &self,
        s: &DVector<f64>,
        reference: &Reference,
        a: &DVector<f64>,
        opts: &EvalOptions<'_>,
    ) -> Result<PolicyEval, MpcError> {
        self.evaluate(s, reference, Some(a), None, opts)
    }

    /// `V(s)` and `π(s)`.
    pub fn eval_v_policy(&self, s: &DVector<f64>, reference: &Reference, opts: &EvalOptions<'_>) -> Result<PolicyEval, MpcError> {
        self.evaluate(s, reference, None, None, opts)
    }

    /// Greedy problem with a perturbed cost; the feasible set is unchanged.
    pub fn explore_action(
        &self,
        s: &DVector<f64>,
        reference: &Reference,
        exploration: &Exploration,
        opts: &EvalOptions<'_>,
    ) -> Result<PolicyEval, MpcError> {
        self.evaluate(s, reference, None, Some(exploration), opts)
    }

    fn evaluate(
        &self,
        s: &DVector<f64>,
        reference: &Reference,
        action: Option<&DVector<f64>>,
        explore: Option<&Exploration>,
        opts: &EvalOptions<'_>,
    ) -> Result<PolicyEval, MpcError> {
        let mut rho = self.params.rho();
        let mut doublings = 0;
        loop {
            let mqp = build_qp(self.params, self.profile, s, reference, action, explore, rho)?;
            let n_u = mqp.n_u;
            let plan = match opts.plan {
                Some(p) if p.len() == n_u => p.clone(),
                _ => DVector::zeros(n_u),
            };
            let warm =
                WarmStart { active_set: opts.active_set.map(|a| a.to_vec()), point: Some(mqp.feasible_start(&plan, action)) };
            let res = solver::solve(&mqp.qp, Some(&warm))?;
            let slack = mqp.slack_total(&res.y_star);
            let mut feasible_unrelaxed = slack <= SLACK_TOL;
            if !feasible_unrelaxed && mqp.unrelaxed_feasible()? {
                feasible_unrelaxed = true;
                if doublings < MAX_RHO_DOUBLINGS {
                    warn!("slack {slack:e} with a feasible unrelaxed problem; doubling rho to {:e}", 2.0 * rho);
                    rho *= 2.0;
                    doublings += 1;
                    continue;
                }
            }
            return Ok(self.finish(&mqp, res, reference, slack, feasible_unrelaxed, rho, opts));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        mqp: &MpcQp,
        res: SolveResult,
        reference: &Reference,
        slack_total: f64,
        feasible_unrelaxed: bool,
        rho: f64,
        opts: &EvalOptions<'_>,
    ) -> PolicyEval {
        let na = self.params.n_a();
        let states = mqp.states(&res.y_star);
        let plan = mqp.inputs(&res.y_star);
        let weak_activation = !res.strict_complementarity;
        let grad = match opts.selection {
            Some(sel) if !weak_activation => Some(self.lagrangian_gradient(mqp, &res, &states, &plan, reference, sel)),
            _ => None,
        };
        PolicyEval {
            value: res.objective,
            action: plan.rows(0, na).into_owned(),
            grad,
            slack_total,
            feasible_unrelaxed,
            weak_activation,
            licq: res.licq,
            rho,
            states,
            plan,
            active_set: res.active_set,
        }
    }

    fn lagrangian_gradient(
        &self,
        mqp: &MpcQp,
        res: &SolveResult,
        states: &[DVector<f64>],
        plan: &DVector<f64>,
        reference: &Reference,
        sel: &ThetaSelection,
    ) -> DVector<f64> {
        let p = self.params;
        let prof = self.profile;
        let ns = p.n_s();
        let na = p.n_a();
        let n = p.horizon;
        let mu = &res.mu_in;
        let mut grad = DVector::zeros(sel.len(p));
        let u_k = |k: usize| plan.rows(k * na, na).into_owned();
        let z_k = |k: usize| {
            let mut z = DVector::zeros(ns + na);
            z.rows_mut(0, ns).copy_from(&states[k]);
            z.rows_mut(ns, na).copy_from(&u_k(k));
            z
        };
        let mut z_r = DVector::zeros(ns + na);
        z_r.rows_mut(0, ns).copy_from(&reference.s);
        z_r.rows_mut(ns, na).copy_from(&reference.a);

        // Imposed constraint rows with their stage and multiplier.
        let stage_rows: Vec<(usize, usize, f64)> =
            mqp.rows.path.iter().chain(mqp.rows.input.iter()).map(|&(k, r, i)| (k, r, mu[i])).collect();
        let term_rows: Vec<(usize, f64)> = mqp.rows.terminal.iter().map(|&(i, row)| (i, mu[row])).collect();
        let x_n = &states[n];

        for (g, range) in sel.ranges(p) {
            let out = &mut grad.as_mut_slice()[range.clone()];
            match g {
                ParamGroup::StageChol => {
                    let mut sm = DMatrix::zeros(ns + na, ns + na);
                    let mut disc = 1.0;
                    for k in 0..n {
                        let e = z_k(k) - &z_r;
                        sm += &e * e.transpose() * disc;
                        disc *= p.gamma;
                    }
                    let gl = sm * &p.h_chol * 2.0;
                    for (o, (i, j)) in out.iter_mut().zip(params::lower_triangle(ns + na)) {
                        *o = gl[(i, j)];
                    }
                }
                ParamGroup::StageLin => {
                    let mut acc = DVector::zeros(ns + na);
                    let mut disc = 1.0;
                    for k in 0..n {
                        acc += z_k(k) * disc;
                        disc *= p.gamma;
                    }
                    out.copy_from_slice(acc.as_slice());
                }
                ParamGroup::TerminalChol => {
                    let disc = p.gamma.powi(n as i32);
                    let e = x_n - &reference.s;
                    let gl = &e * e.transpose() * &p.p_chol * (2.0 * disc);
                    for (o, (i, j)) in out.iter_mut().zip(params::lower_triangle(ns)) {
                        *o = gl[(i, j)];
                    }
                }
                ParamGroup::TerminalLin => {
                    let disc = p.gamma.powi(n as i32);
                    for (o, v) in out.iter_mut().zip(x_n.iter()) {
                        *o = disc * v;
                    }
                }
                ParamGroup::C => {
                    for &(k, r, m) in &stage_rows {
                        for l in 0..ns {
                            out[r * ns + l] += m * states[k][l];
                        }
                    }
                }
                ParamGroup::D => {
                    for &(k, r, m) in &stage_rows {
                        let u = u_k(k);
                        for l in 0..na {
                            out[r * na + l] += m * u[l];
                        }
                    }
                }
                ParamGroup::CBar => {
                    for &(_, r, m) in &stage_rows {
                        out[r] += m;
                    }
                    for &(i, m) in &term_rows {
                        out[prof.terminal_rows[i].0] += m;
                    }
                }
                ParamGroup::K | ParamGroup::WNormals | ParamGroup::WOffsets => {}
            }
        }

        // Dependence through the tightening profile.
        for (col, target) in sel.tightening_columns(p).into_iter().enumerate() {
            let Some(t) = target else { continue };
            let mut acc = 0.0;
            for &(k, r, m) in &stage_rows {
                if m != 0.0 {
                    acc += m * prof.sens_d[k][(r, col)];
                }
            }
            for &(i, m) in &term_rows {
                if m == 0.0 {
                    continue;
                }
                acc += m * prof.sens_g[(i, col)];
                if let Some(Some(dg)) = prof.sens_g_mat.get(col) {
                    acc += m * dg.row(i).transpose().dot(x_n);
                }
            }
            grad[t] += acc;
        }
        grad
    }
}

#[cfg(test)]
mod tests;
