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

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::polytope::FacetPolytope;
use crate::solver::QpProblem;
use crate::test_support::double_integrator_params;

fn v2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_column_slice(&[x, y])
}

fn zero_ref() -> Reference {
    Reference::zero(2, 1)
}

#[test]
fn origin_with_short_horizon_is_zero() {
    let p = double_integrator_params(1, 0.01);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mpc = Mpc::new(&p, &prof);
    let e = mpc.eval_v_policy(&v2(0.0, 0.0), &zero_ref(), &EvalOptions::default()).unwrap();
    assert!(e.value.abs() < 1e-12);
    assert!(e.action.amax() < 1e-12);
    assert_eq!(e.slack_total, 0.0);
}

#[test]
fn default_qp_has_twenty_stages() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mqp = build_qp(&p, &prof, &v2(-1.0, 0.0), &zero_ref(), None, None, p.rho()).unwrap();
    assert_eq!(mqp.n_u, 20);
    assert_eq!(mqp.n_path, 4 * 19);
    // Path row for p <= 1 at stage k carries the tightened offset.
    let (k, r, row) = mqp.rows.path[4 * 5];
    assert_eq!((k, r), (6, 0));
    let x_free = &mqp.phi[k] * v2(-1.0, 0.0) + &mqp.beta[k];
    assert!((mqp.qp.b_in[row] - (1.0 - prof.d[k][0] - x_free[0])).abs() < 1e-12);
}

#[test]
fn pinned_infeasible_action_uses_slack() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mpc = Mpc::new(&p, &prof);
    let e = mpc.eval_q(&v2(0.99, 0.99), &zero_ref(), &DVector::from_element(1, 10.0), &EvalOptions::default()).unwrap();
    assert!(e.slack_total > 0.0);
    assert!(!e.feasible_unrelaxed);
}

#[test]
fn q_at_policy_equals_v() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mpc = Mpc::new(&p, &prof);
    let r = Reference { s: v2(1.0, 0.0), a: DVector::zeros(1) };
    let s = v2(-0.5, 0.2);
    let v = mpc.eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
    let q = mpc.eval_q(&s, &r, &v.action, &EvalOptions::default()).unwrap();
    assert!((q.value - v.value).abs() < 1e-9 * (1.0 + v.value.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let a = DVector::from_element(1, rng.random_range(-5.0..5.0));
        let q = mpc.eval_q(&s, &r, &a, &EvalOptions::default()).unwrap();
        assert!(v.value <= q.value + 1e-9);
    }
}

#[test]
fn linear_gradient_is_discounted_stage_sum() {
    let p = double_integrator_params(20, 0.02);
    let sel = ThetaSelection::new(vec![ParamGroup::StageLin, ParamGroup::TerminalLin]);
    let prof = p.build_profile(&sel).unwrap();
    let mpc = Mpc::new(&p, &prof);
    let s = v2(0.1, 0.0);
    let v = mpc.eval_v_policy(&s, &zero_ref(), &EvalOptions::default()).unwrap();
    let q = mpc.eval_q(&s, &zero_ref(), &v.action, &EvalOptions { selection: Some(&sel), ..Default::default() }).unwrap();
    let g = q.grad.unwrap();
    let mut acc = DVector::zeros(3);
    for k in 0..20 {
        let mut z = DVector::zeros(3);
        z.rows_mut(0, 2).copy_from(&q.states[k]);
        z[2] = q.plan[k];
        acc += z * 0.99f64.powi(k as i32);
    }
    assert!((g.rows(0, 3) - acc).amax() < 1e-12);
}

#[test]
fn scalar_toy_matches_grid_search() {
    // x+ = 0.9x + u, |x| <= 1, |u| <= 0.5, N = 1.
    let p = MpcParams {
        h_chol: DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.5])),
        h_lin: DVector::zeros(2),
        p_chol: DMatrix::from_element(1, 1, 2.0),
        p_lin: DVector::zeros(1),
        a: DMatrix::from_element(1, 1, 0.9),
        b: DMatrix::from_element(1, 1, 1.0),
        b_aff: DVector::zeros(1),
        c: DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 0.0, 0.0]),
        d: DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, -1.0]),
        c_bar: DVector::from_column_slice(&[-1.0, -1.0, -0.5, -0.5]),
        k: DMatrix::from_element(1, 1, 0.4),
        w: FacetPolytope::axis_box(&DVector::from_element(1, -0.01), &DVector::from_element(1, 0.01)),
        gamma: 0.9,
        rho: None,
        horizon: 1,
    };
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mpc = Mpc::new(&p, &prof);
    let s = DVector::from_element(1, 0.8);
    let r = Reference { s: DVector::from_element(1, 0.3), a: DVector::zeros(1) };
    let v = mpc.eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
    // Terminal rows restrict x_1; evaluate Q on a grid.
    let mut best = f64::INFINITY;
    for i in 0..=100_000 {
        let u = -0.5 + i as f64 * 1e-5;
        let x1 = 0.9 * 0.8 + u;
        if (&prof.g_mat * DVector::from_element(1, x1) + &prof.g).max() > 0.0 {
            continue;
        }
        let cost = (0.8f64 - 0.3).powi(2) + 0.25 * u * u + 0.9 * 4.0 * (x1 - 0.3).powi(2);
        best = best.min(cost);
    }
    assert!((v.value - best).abs() < 1e-6, "{} vs {best}", v.value);
}

#[test]
fn exploration_modes() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mpc = Mpc::new(&p, &prof);
    let s = v2(-0.5, -1.0);
    let r = zero_ref();
    let v = mpc.eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
    let e = mpc.explore_action(&s, &r, &Exploration::Linear(DVector::zeros(1)), &EvalOptions::default()).unwrap();
    assert!((e.action[0] - v.action[0]).abs() < 1e-9);
    let q = DVector::from_element(1, 0.3);
    let e = mpc.explore_action(&s, &r, &Exploration::Proximity { q: q.clone(), weight: 1e4 }, &EvalOptions::default()).unwrap();
    assert!((e.action[0] - 0.3).abs() < 1e-6);
    let e = mpc.explore_action(&s, &r, &Exploration::Linear(DVector::from_element(1, -1e3)), &EvalOptions::default()).unwrap();
    let bound = -prof.c[0][4];
    assert!(e.action[0] <= bound + 1e-9);
    assert!((e.action[0] - bound).abs() < 1e-6, "{} {} {}", e.action[0], bound, e.slack_total);
}

fn unrelaxed(mqp: &MpcQp) -> QpProblem {
    let n = mqp.n_vars();
    let slacks: Vec<usize> = (mqp.n_u..mqp.n_u + mqp.n_path + mqp.n_term).collect();
    let mut a_eq = DMatrix::zeros(slacks.len(), n);
    for (i, &c) in slacks.iter().enumerate() {
        a_eq[(i, c)] = 1.0;
    }
    let mut qp = mqp.qp.clone();
    qp.a_eq = a_eq;
    qp.b_eq = DVector::zeros(slacks.len());
    qp
}

#[test]
fn exact_penalty_on_feasible_states() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 20 {
        let s = v2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r = Reference { s: v2(rng.random_range(-1.0..1.0), 0.0), a: DVector::zeros(1) };
        let mqp = build_qp(&p, &prof, &s, &r, None, None, p.rho()).unwrap();
        let Ok(hard) = solver::solve(&unrelaxed(&mqp), None) else { continue };
        let soft = Mpc::new(&p, &prof).eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
        assert!(soft.slack_total < SLACK_TOL);
        assert!((mqp.inputs(&hard.y_star) - &soft.plan).amax() < 1e-8);
        checked += 1;
    }
}

#[test]
fn duplicated_row_keeps_licq() {
    let mut p = double_integrator_params(20, 0.02);
    let mut c = DMatrix::zeros(7, 2);
    c.rows_mut(0, 6).copy_from(&p.c);
    c[(6, 0)] = 1.0;
    let mut d = DMatrix::zeros(7, 1);
    d.rows_mut(0, 6).copy_from(&p.d);
    let mut cb = DVector::zeros(7);
    cb.rows_mut(0, 6).copy_from(&p.c_bar);
    cb[6] = -1.0;
    p.c = c;
    p.d = d;
    p.c_bar = cb;
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    // Reference beyond the bound keeps p <= 1 active along the plan.
    let r = Reference { s: v2(1.5, 0.0), a: DVector::zeros(1) };
    let e = Mpc::new(&p, &prof).eval_v_policy(&v2(0.8, 0.0), &r, &EvalOptions::default()).unwrap();
    assert!(e.licq, "{:?} {}", e.active_set, e.slack_total);
}

#[test]
fn zero_discount_decouples() {
    let mut p = double_integrator_params(20, 0.02);
    p.gamma = 0.0;
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let s = v2(0.3, -0.2);
    let r = Reference { s: v2(-0.1, 0.0), a: DVector::zeros(1) };
    let e = Mpc::new(&p, &prof).eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
    // First stage alone: u_0 = a_r, cost = (s - s_r)ᵀ H_ss (s - s_r).
    let dx = &s - &r.s;
    let first = dx[0] * dx[0] + 0.01 * dx[1] * dx[1];
    assert!((e.value - first).abs() < 1e-9);
}

fn fd_check(p: &MpcParams, sel: &ThetaSelection, s: &DVector<f64>, r: &Reference, a: &DVector<f64>) -> usize {
    let prof = p.build_profile(sel).unwrap();
    let e = Mpc::new(p, &prof).eval_q(s, r, a, &EvalOptions { selection: Some(sel), ..Default::default() }).unwrap();
    let Some(g) = e.grad else { return 0 };
    let theta = sel.theta(p);
    let h = 1e-6;
    let q_at = |t: &DVector<f64>| {
        let pp = sel.apply(p, t);
        let prof = pp.build_profile(&ThetaSelection::new(vec![])).unwrap();
        Mpc::new(&pp, &prof).eval_q(s, r, a, &EvalOptions::default()).unwrap().value
    };
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        tp[i] += h;
        let mut tm = theta.clone();
        tm[i] -= h;
        let fd = (q_at(&tp) - q_at(&tm)) / (2.0 * h);
        assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0), "entry {i}: fd {fd} vs {}", g[i]);
    }
    1
}

#[test]
fn q_gradient_matches_finite_differences() {
    let mut p = double_integrator_params(20, 0.02);
    // A generic W avoids degenerate support LPs.
    p.w.normals[(0, 1)] = 0.2;
    p.w.normals[(3, 0)] = -0.3;
    let all = ThetaSelection::new(ParamGroup::ALL.to_vec());
    let s = v2(0.7, 0.3);
    let r = Reference { s: v2(1.0, 0.0), a: DVector::zeros(1) };
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let v = Mpc::new(&p, &prof).eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
    let a = &v.action + DVector::from_element(1, 0.1);
    assert_eq!(fd_check(&p, &all, &s, &r, &a), 1);
}
