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

//! Constrained Q-learning on the MPC parameters.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::datastore::SdcRows;
use crate::mpc::{EvalOptions, Mpc, MpcError, MpcParams, ParamGroup, PolicyEval, Reference, ThetaSelection, SLACK_TOL};
use crate::solver::{self, QpProblem, SolverError};
use crate::tightening::{TighteningError, TighteningProfile};

/// SDC tolerance used when verifying an accepted parameter.
pub const SDC_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("strict complementarity fails at the sample")]
    WeakActivation,
    #[error("line search found no descent")]
    NoDescent,
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
    #[error("projection failed: {0}")]
    Projection(SolverError),
}

#[derive(Clone, Debug)]
pub struct LearnerConfig {
    pub alpha: f64,
    /// Floor on the Cholesky diagonals and on the eigenvalues of `H`, `P`.
    pub eps: f64,
    /// Stop when the projected gradient norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub guard_halvings: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { alpha: 0.1, eps: 1e-6, tol: 1e-6, max_iter: 200, max_backtracks: 40, guard_halvings: 5 }
    }
}

/// One observed transition with its cost and references.
#[derive(Clone, Debug)]
pub struct Sample {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub s_plus: DVector<f64>,
    /// Stage cost `ℓ(s, a)`.
    pub cost: f64,
    pub reference: Reference,
    pub reference_plus: Reference,
    /// Solution of the MPC that chose `a`, used to warm-start evaluations.
    pub warm: Option<WarmHint>,
}

/// Input plan and active set of a nearby MPC solution.
#[derive(Clone, Debug)]
pub struct WarmHint {
    pub plan: DVector<f64>,
    pub active_set: Vec<usize>,
}

impl WarmHint {
    pub fn from_eval(eval: &PolicyEval) -> Self {
        Self { plan: eval.plan.clone(), active_set: eval.active_set.clone() }
    }

    /// Plan advanced by one stage, last input repeated.
    pub fn shifted_plan(&self, na: usize) -> DVector<f64> {
        let mut out = self.plan.clone();
        let n = out.len();
        if n > na {
            out.as_mut_slice().copy_within(na..n, 0);
        }
        out
    }
}

impl Sample {
    fn q_options<'a>(&'a self, selection: Option<&'a ThetaSelection>) -> EvalOptions<'a> {
        EvalOptions {
            selection,
            plan: self.warm.as_ref().map(|w| &w.plan),
            active_set: self.warm.as_ref().map(|w| w.active_set.as_slice()),
        }
    }
}

/// Data of one update: the frozen TD target and the current SDC rows.
#[derive(Clone, Debug)]
pub struct UpdateProblem<'a> {
    pub target: f64,
    pub sample: &'a Sample,
    pub sdc: &'a SdcRows,
    pub eps: f64,
}

/// `ℓ + γ V(s₊)` under the current parameter.
pub fn frozen_target(params: &MpcParams, profile: &TighteningProfile, sample: &Sample) -> Result<(f64, PolicyEval), MpcError> {
    let plan = sample.warm.as_ref().map(|w| w.shifted_plan(params.n_a()));
    let opts = EvalOptions { plan: plan.as_ref(), ..Default::default() };
    let v = Mpc::new(params, profile).eval_v_policy(&sample.s_plus, &sample.reference_plus, &opts)?;
    Ok((sample.cost + params.gamma * v.value, v))
}

/// `ψ = (target − Q_θ(s, a))²` and its gradient over the selected entries.
pub fn td_residual(
    params: &MpcParams,
    sel: &ThetaSelection,
    theta: &DVector<f64>,
    sample: &Sample,
    target: f64,
) -> Result<(f64, DVector<f64>), LearnerError> {
    let p = sel.apply(params, theta);
    let prof = p.build_profile(sel)?;
    let q = Mpc::new(&p, &prof).eval_q(&sample.s, &sample.reference, &sample.a, &sample.q_options(Some(sel)))?;
    let grad_q = q.grad.ok_or(LearnerError::WeakActivation)?;
    let e = target - q.value;
    Ok((e * e, grad_q * (-2.0 * e)))
}

/// ψ only; infinite when the parameter is unusable.
fn psi_at(params: &MpcParams, sel: &ThetaSelection, theta: &DVector<f64>, sample: &Sample, target: f64) -> f64 {
    let p = sel.apply(params, theta);
    if p.validate().is_err() {
        return f64::INFINITY;
    }
    let Ok(prof) = p.build_profile(&ThetaSelection::new(vec![])) else { return f64::INFINITY };
    match Mpc::new(&p, &prof).eval_q(&sample.s, &sample.reference, &sample.a, &sample.q_options(None)) {
        Ok(q) => (target - q.value).powi(2),
        Err(_) => f64::INFINITY,
    }
}

/// Linear constraints `A θ <= b` and lower bounds on the feasible set of the
/// update problem.
#[derive(Clone, Debug)]
pub struct FeasibleSet {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `(index, floor)` pairs.
    pub lower: Vec<(usize, f64)>,
}

impl FeasibleSet {
    pub fn new(params: &MpcParams, sel: &ThetaSelection, sdc: &SdcRows, eps: f64) -> Self {
        let n = sel.len(params);
        let lower = sel.chol_diagonal_indices(params).into_iter().map(|i| (i, eps)).collect();
        let rm = sel.range(params, ParamGroup::WNormals);
        let ro = sel.range(params, ParamGroup::WOffsets);
        if rm.is_none() && ro.is_none() {
            return Self { a: DMatrix::zeros(0, n), b: DVector::zeros(0), lower };
        }
        let w = &params.w;
        let (nf, dim) = (w.n_facets(), w.dim());
        let rows = sdc.n_rows(nf);
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for (j, v) in sdc.vertices.iter().enumerate() {
            for i in 0..nf {
                let row = j * nf + i;
                match &rm {
                    Some(r) => {
                        for l in 0..dim {
                            a[(row, r.start + i * dim + l)] = v[l];
                        }
                    }
                    None => b[row] -= w.normals.row(i).transpose().dot(v),
                }
                match &ro {
                    Some(r) => a[(row, r.start + i)] = -1.0,
                    None => b[row] += w.offsets[i],
                }
            }
        }
        Self { a, b, lower }
    }

    pub fn violation(&self, theta: &DVector<f64>) -> f64 {
        let lin = (&self.a * theta - &self.b).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        self.lower.iter().map(|&(i, f)| f - theta[i]).fold(lin, f64::max)
    }

    /// Euclidean projection of `y`.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>, LearnerError> {
        if self.violation(y) <= 0.0 {
            return Ok(y.clone());
        }
        let qp = self.projection_qp(y);
        solver::solve(&qp, None).map(|r| r.y_star).map_err(LearnerError::Projection)
    }

    /// Projection of `y` onto the feasible points with `gᵀθ = c`; `None`
    /// when that slice is empty or degenerate.
    pub fn project_on_level(&self, y: &DVector<f64>, g: &DVector<f64>, c: f64) -> Result<Option<DVector<f64>>, LearnerError> {
        let qp =
            self.projection_qp(y).with_equalities(DMatrix::from_row_slice(1, g.len(), g.as_slice()), DVector::from_element(1, c));
        match solver::solve(&qp, None) {
            Ok(r) => Ok(Some(r.y_star)),
            Err(SolverError::Infeasible | SolverError::SingularKkt) => Ok(None),
            Err(e) => Err(LearnerError::Projection(e)),
        }
    }

    fn projection_qp(&self, y: &DVector<f64>) -> QpProblem {
        let n = y.len();
        let m = self.a.nrows() + self.lower.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        a.rows_mut(0, self.a.nrows()).copy_from(&self.a);
        b.rows_mut(0, self.a.nrows()).copy_from(&self.b);
        for (k, &(i, f)) in self.lower.iter().enumerate() {
            a[(self.a.nrows() + k, i)] = -1.0;
            b[self.a.nrows() + k] = -f;
        }
        QpProblem::new(DMatrix::identity(n, n), -y).with_inequalities(a, b)
    }
}

#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub theta_star: DVector<f64>,
    pub psi_initial: f64,
    pub psi_star: f64,
    /// `‖θ − P(θ − ∇ψ)‖` at `θ★`.
    pub proj_grad_norm: f64,
    pub iterations: usize,
}

/// Projected descent with backtracking on ψ over the feasible set: a
/// projected Gauss-Newton step first, the projected gradient otherwise.
pub fn solve_update(
    params: &MpcParams,
    sel: &ThetaSelection,
    theta_k: &DVector<f64>,
    problem: &UpdateProblem<'_>,
    cfg: &LearnerConfig,
) -> Result<UpdateOutcome, LearnerError> {
    let set = FeasibleSet::new(params, sel, problem.sdc, problem.eps);
    let mut theta = theta_k.clone();
    let (mut psi, mut grad) = td_residual(params, sel, &theta, problem.sample, problem.target)?;
    let psi_initial = psi;
    let mut pg = (&theta - set.project(&(&theta - &grad))?).norm();
    let mut iterations = 0;
    while pg > cfg.tol && iterations < cfg.max_iter {
        let descent = |trial: &DVector<f64>| {
            let psi_trial = psi_at(params, sel, trial, problem.sample, problem.target);
            psi_trial <= psi + 1e-4 * grad.dot(&(trial - &theta)) && psi_trial < psi
        };
        // Gauss-Newton: nearest feasible point zeroing the linearized
        // residual, i.e. gᵀ(θ' − θ) = −2ψ.
        let mut accepted = None;
        if let Some(target) = set.project_on_level(&theta, &grad, grad.dot(&theta) - 2.0 * psi)? {
            let dir = target - &theta;
            let mut t = 1.0;
            for _ in 0..=cfg.max_backtracks {
                let trial = &theta + &dir * t;
                if descent(&trial) {
                    accepted = Some(trial);
                    break;
                }
                t *= 0.5;
            }
        }
        if accepted.is_none() {
            let g2 = grad.norm_squared();
            let mut eta = if g2 > 0.0 { 2.0 * psi / g2 } else { 1.0 };
            for _ in 0..=cfg.max_backtracks {
                let trial = set.project(&(&theta - &grad * eta))?;
                if descent(&trial) {
                    accepted = Some(trial);
                    break;
                }
                eta *= 0.5;
            }
        }
        let Some(next) = accepted else {
            if iterations == 0 {
                return Err(LearnerError::NoDescent);
            }
            break;
        };
        iterations += 1;
        theta = next;
        match td_residual(params, sel, &theta, problem.sample, problem.target) {
            Ok((p, g)) => {
                psi = p;
                grad = g;
            }
            // Nonsmooth point: keep the accepted iterate and stop.
            Err(LearnerError::WeakActivation) => {
                psi = psi_at(params, sel, &theta, problem.sample, problem.target);
                pg = 0.0;
                break;
            }
            Err(e) => return Err(e),
        }
        pg = (&theta - set.project(&(&theta - &grad))?).norm();
    }
    debug_assert!(psi <= psi_initial);
    Ok(UpdateOutcome { theta_star: theta, psi_initial, psi_star: psi, proj_grad_norm: pg, iterations })
}

/// `θ_k + α (θ★ − θ_k)` with the Cholesky diagonals floored at `eps`.
pub fn step(theta_k: &DVector<f64>, theta_star: &DVector<f64>, alpha: f64, floor: &[usize], eps: f64) -> DVector<f64> {
    let mut out = theta_k + (theta_star - theta_k) * alpha;
    for &i in floor {
        out[i] = out[i].max(eps);
    }
    out
}

/// Smallest eigenvalue of `L Lᵀ`.
pub fn min_eigenvalue(chol: &DMatrix<f64>) -> f64 {
    let m = chol * chol.transpose();
    SymmetricEigen::new(m).eigenvalues.min()
}

#[derive(Clone, Debug)]
pub struct GuardOutcome {
    pub params: MpcParams,
    pub profile: TighteningProfile,
    pub alpha_eff: f64,
    pub halvings: usize,
    pub accepted: bool,
}

/// Context the guard checks a candidate against.
#[derive(Clone, Copy, Debug)]
pub struct GuardContext<'a> {
    pub s: &'a DVector<f64>,
    pub reference: &'a Reference,
    /// Whether the current parameter needs slack at `s`.
    pub slack_before: bool,
    pub sdc: &'a SdcRows,
    /// Warm start for the evaluation at `s`.
    pub warm: Option<&'a WarmHint>,
}

/// Applies the step, halving `alpha` until the candidate yields a terminal
/// set, needs no new slack at the current state, and keeps the SDC and
/// positivity floors. Falls back to `params`.
#[allow(clippy::too_many_arguments)]
pub fn on_update_feasibility_guard(
    params: &MpcParams,
    profile: &TighteningProfile,
    sel: &ThetaSelection,
    theta_k: &DVector<f64>,
    theta_star: &DVector<f64>,
    ctx: &GuardContext<'_>,
    cfg: &LearnerConfig,
) -> GuardOutcome {
    let floor = sel.chol_diagonal_indices(params);
    let mut alpha = cfg.alpha;
    for halvings in 0..=cfg.guard_halvings {
        let theta = step(theta_k, theta_star, alpha, &floor, cfg.eps);
        match check_candidate(params, sel, &theta, ctx, cfg.eps) {
            Ok((p, prof)) => return GuardOutcome { params: p, profile: prof, alpha_eff: alpha, halvings, accepted: true },
            Err(why) => debug!("update rejected at alpha {alpha:e}: {why}"),
        }
        alpha *= 0.5;
    }
    info!("update rejected after {} halvings; parameter kept", cfg.guard_halvings);
    GuardOutcome {
        params: params.clone(),
        profile: profile.clone(),
        alpha_eff: 0.0,
        halvings: cfg.guard_halvings,
        accepted: false,
    }
}

fn check_candidate(
    params: &MpcParams,
    sel: &ThetaSelection,
    theta: &DVector<f64>,
    ctx: &GuardContext<'_>,
    eps: f64,
) -> Result<(MpcParams, TighteningProfile), String> {
    let p = sel.apply(params, theta);
    p.validate()?;
    if min_eigenvalue(&p.h_chol) < eps || min_eigenvalue(&p.p_chol) < eps {
        return Err("cost loses positivity".into());
    }
    if !ctx.sdc.satisfied(&p.w, SDC_TOL) {
        return Err("SDC violated".into());
    }
    let prof = p.build_profile(&ThetaSelection::new(vec![])).map_err(|e| e.to_string())?;
    let opts = EvalOptions {
        plan: ctx.warm.map(|w| &w.plan),
        active_set: ctx.warm.map(|w| w.active_set.as_slice()),
        ..Default::default()
    };
    let v = Mpc::new(&p, &prof).eval_v_policy(ctx.s, ctx.reference, &opts).map_err(|e| e.to_string())?;
    if v.slack_total > SLACK_TOL && !ctx.slack_before {
        return Err(format!("slack {:e} at the current state", v.slack_total));
    }
    Ok((p, prof))
}

/// Learning log row.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub t: usize,
    pub psi: f64,
    pub psi_star: f64,
    pub proj_grad_norm: f64,
    pub alpha_eff: f64,
    pub sdc_rows: usize,
    pub min_eig_h: f64,
    pub skipped: Option<String>,
}

/// Parameter learner for a fixed selection.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: LearnerConfig,
    pub selection: ThetaSelection,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, selection: ThetaSelection) -> Self {
        Self { cfg, selection }
    }

    /// One Q-learning update from `sample`. Returns the log row and the new
    /// parameter with its profile when it changed.
    pub fn update(
        &self,
        t: usize,
        params: &MpcParams,
        profile: &TighteningProfile,
        sample: &Sample,
        sdc: &SdcRows,
    ) -> Result<(UpdateRecord, Option<(MpcParams, TighteningProfile)>), LearnerError> {
        let sel = &self.selection;
        let mut rec = UpdateRecord {
            t,
            psi: f64::NAN,
            psi_star: f64::NAN,
            proj_grad_norm: f64::NAN,
            alpha_eff: 0.0,
            sdc_rows: sdc.n_rows(params.w.n_facets()),
            min_eig_h: min_eigenvalue(&params.h_chol),
            skipped: None,
        };
        let (target, v_next) = frozen_target(params, profile, sample)?;
        let theta_k = sel.theta(params);
        if self.cfg.alpha == 0.0 {
            rec.psi = psi_at(params, sel, &theta_k, sample, target);
            return Ok((rec, None));
        }
        let problem = UpdateProblem { target, sample, sdc, eps: self.cfg.eps };
        let out = match solve_update(params, sel, &theta_k, &problem, &self.cfg) {
            Ok(out) => out,
            Err(LearnerError::WeakActivation) => {
                info!("t={t}: weak activation, sample skipped");
                rec.psi = psi_at(params, sel, &theta_k, sample, target);
                rec.skipped = Some("weak activation".into());
                return Ok((rec, None));
            }
            Err(LearnerError::NoDescent) => {
                warn!("t={t}: no descent, parameter kept");
                rec.skipped = Some("no descent".into());
                return Ok((rec, None));
            }
            Err(e) => return Err(e),
        };
        rec.psi = out.psi_initial;
        rec.psi_star = out.psi_star;
        rec.proj_grad_norm = out.proj_grad_norm;
        debug!("t={t}: update took {} iterations", out.iterations);
        assert!(out.psi_star <= out.psi_initial, "update increased psi");
        if out.theta_star == theta_k {
            return Ok((rec, None));
        }
        let next_hint = WarmHint::from_eval(&v_next);
        let ctx = GuardContext {
            s: &sample.s_plus,
            reference: &sample.reference_plus,
            slack_before: v_next.slack_total > SLACK_TOL,
            sdc,
            warm: Some(&next_hint),
        };
        let g = on_update_feasibility_guard(params, profile, sel, &theta_k, &out.theta_star, &ctx, &self.cfg);
        if !g.accepted {
            rec.skipped = Some("guard".into());
            return Ok((rec, None));
        }
        rec.alpha_eff = g.alpha_eff;
        rec.min_eig_h = min_eigenvalue(&g.params.h_chol);
        Ok((rec, Some((g.params, g.profile))))
    }
}

#[cfg(test)]
mod tests;
