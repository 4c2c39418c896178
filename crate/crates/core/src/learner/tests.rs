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

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datastore::SdcRows;
use crate::test_support::double_integrator_params;

fn v2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_column_slice(&[x, y])
}

fn near_bound_sample() -> Sample {
    Sample {
        s: v2(0.9, 0.2),
        a: DVector::from_element(1, -1.0),
        s_plus: v2(0.895, 0.1),
        cost: 0.5,
        reference: Reference { s: v2(1.5, 0.0), a: DVector::zeros(1) },
        reference_plus: Reference { s: v2(1.5, 0.0), a: DVector::zeros(1) },
        warm: None,
    }
}

/// Box W with slightly tilted facets so the support LPs are nondegenerate.
fn tilted(mut p: MpcParams) -> MpcParams {
    p.w.normals[(0, 1)] = 0.2;
    p.w.normals[(3, 0)] = -0.3;
    p
}

fn corners(h: f64) -> SdcRows {
    SdcRows { vertices: vec![v2(h, h), v2(-h, h), v2(-h, -h), v2(h, -h)] }
}

fn q_value(p: &MpcParams, sample: &Sample) -> f64 {
    let prof = p.build_profile(&ThetaSelection::new(vec![])).unwrap();
    Mpc::new(p, &prof).eval_q(&sample.s, &sample.reference, &sample.a, &EvalOptions::default()).unwrap().value
}

#[test]
fn residual_vanishes_at_target() {
    let p = double_integrator_params(20, 0.02);
    let sel = ThetaSelection::default();
    let sample = near_bound_sample();
    let q = q_value(&p, &sample);
    let (psi, grad) = td_residual(&p, &sel, &sel.theta(&p), &sample, q).unwrap();
    assert_eq!(psi, 0.0);
    assert_eq!(grad.amax(), 0.0);
    let (psi, _) = td_residual(&p, &sel, &sel.theta(&p), &sample, q - 3.0).unwrap();
    assert!((psi - 9.0).abs() < 1e-9);
}

#[test]
fn psi_gradient_matches_finite_differences() {
    let base = tilted(double_integrator_params(20, 0.02));
    let sel = ThetaSelection::default();
    let sample = near_bound_sample();
    let target = q_value(&base, &sample) - 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 10 {
        let mut theta = sel.theta(&base);
        for v in theta.iter_mut() {
            *v *= 1.0 + rng.random_range(-0.05..0.05);
        }
        let Ok((_, grad)) = td_residual(&base, &sel, &theta, &sample, target) else { continue };
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (psi_at(&base, &sel, &tp, &sample, target) - psi_at(&base, &sel, &tm, &sample, target)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1.0), "entry {i}: {fd} vs {}", grad[i]);
        }
        checked += 1;
    }
}

#[test]
fn zero_residual_keeps_theta() {
    let p = double_integrator_params(20, 0.02);
    let sel = ThetaSelection::default();
    let sample = near_bound_sample();
    let q = q_value(&p, &sample);
    let sdc = corners(0.01);
    let theta = sel.theta(&p);
    let problem = UpdateProblem { target: q, sample: &sample, sdc: &sdc, eps: 1e-6 };
    let out = solve_update(&p, &sel, &theta, &problem, &LearnerConfig::default()).unwrap();
    assert_eq!(out.theta_star, theta);
    assert_eq!(out.iterations, 0);
}

#[test]
fn linear_toy_reaches_closed_form() {
    // N = 1 with a pinned action: Q is affine in (h, p).
    let mut p = double_integrator_params(1, 0.02);
    p.gamma = 0.9;
    let sel = ThetaSelection::new(vec![ParamGroup::StageLin, ParamGroup::TerminalLin]);
    let sample = Sample { s: v2(0.3, -0.2), a: DVector::from_element(1, 0.5), ..near_bound_sample() };
    let theta = sel.theta(&p);
    let q0 = q_value(&p, &sample);
    let z0 = DVector::from_column_slice(&[0.3, -0.2, 0.5]);
    let x1 = &p.a * v2(0.3, -0.2) + &p.b * DVector::from_element(1, 0.5);
    let mut g = DVector::zeros(5);
    g.rows_mut(0, 3).copy_from(&z0);
    g.rows_mut(3, 2).copy_from(&(x1 * 0.9));
    let target = q0 + 2.0;
    let expected = &theta + &g * (2.0 / g.norm_squared());
    let sdc = corners(0.01);
    let problem = UpdateProblem { target, sample: &sample, sdc: &sdc, eps: 1e-6 };
    let out = solve_update(&p, &sel, &theta, &problem, &LearnerConfig::default()).unwrap();
    assert!((out.theta_star - expected).amax() < 1e-6);
    assert!(out.psi_star < 1e-12);
}

#[test]
fn projection_keeps_sdc() {
    let p = tilted(double_integrator_params(20, 0.02));
    let sel = ThetaSelection::default();
    let sample = near_bound_sample();
    let q = q_value(&p, &sample);
    // Vertices on the facets of W: any shrinking step is blocked.
    let sdc = SdcRows {
        vertices: (0..4)
            .map(|i| {
                let n = p.w.normals.row(i).transpose();
                &n * (p.w.offsets[i] / n.norm_squared())
            })
            .collect(),
    };
    let theta = sel.theta(&p);
    let problem = UpdateProblem { target: q - 5.0, sample: &sample, sdc: &sdc, eps: 1e-6 };
    let out = solve_update(&p, &sel, &theta, &problem, &LearnerConfig::default()).unwrap();
    let w = sel.apply(&p, &out.theta_star).w;
    assert!(sdc.satisfied(&w, 1e-10));
    assert!(out.psi_star <= out.psi_initial);
}

#[test]
fn feasible_set_projection_oracle() {
    // One vertex, offsets only: m_i >= M_i v.
    let p = double_integrator_params(20, 0.02);
    let sel = ThetaSelection::new(vec![ParamGroup::WOffsets]);
    let sdc = SdcRows { vertices: vec![v2(0.015, -0.005)] };
    let set = FeasibleSet::new(&p, &sel, &sdc, 1e-6);
    let y = DVector::from_column_slice(&[0.0, 0.03, 0.0, -0.1]);
    let proj = set.project(&y).unwrap();
    let floor = &p.w.normals * v2(0.015, -0.005);
    for i in 0..4 {
        assert!((proj[i] - y[i].max(floor[i])).abs() < 1e-12);
    }
}

#[test]
fn step_examples() {
    let a = DVector::from_column_slice(&[0.0, 2.0]);
    let b = DVector::from_column_slice(&[1.0, 4.0]);
    assert_eq!(step(&a, &a, 0.1, &[], 1e-6), a);
    assert_eq!(step(&a, &b, 1.0, &[], 1e-6), b);
    assert!((step(&a, &b, 0.1, &[], 1e-6)[0] - 0.1).abs() < 1e-15);
    assert_eq!(step(&a, &b, 0.1, &[0], 0.5)[0], 0.5);
}

fn guard_ctx<'a>(s: &'a DVector<f64>, r: &'a Reference, sdc: &'a SdcRows) -> GuardContext<'a> {
    GuardContext { s, reference: r, slack_before: false, sdc, warm: None }
}

#[test]
fn guard_accepts_benign_update() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let sel = ThetaSelection::default();
    let theta = sel.theta(&p);
    let mut star = theta.clone();
    for i in 8..12 {
        star[i] = 0.015;
    }
    let (s, r, sdc) = (v2(0.0, 0.0), Reference::zero(2, 1), corners(0.01));
    let g = on_update_feasibility_guard(&p, &prof, &sel, &theta, &star, &guard_ctx(&s, &r, &sdc), &LearnerConfig::default());
    assert!(g.accepted);
    assert_eq!(g.alpha_eff, 0.1);
    assert!((g.params.w.offsets[0] - 0.0195).abs() < 1e-15);
}

/// Largest box half-width with a nonempty terminal set, by bisection.
fn critical_half_width() -> f64 {
    let (mut lo, mut hi) = (0.02, 2.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if double_integrator_params(20, mid).build_profile(&ThetaSelection::default()).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn guard_rejects_inflation_and_halves_marginal_steps() {
    let p = double_integrator_params(20, 0.02);
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let sel = ThetaSelection::default();
    let theta = sel.theta(&p);
    let (s, r, sdc) = (v2(0.0, 0.0), Reference::zero(2, 1), corners(0.01));
    let ctx = guard_ctx(&s, &r, &sdc);
    let hc = critical_half_width();

    let mut star = theta.clone();
    for i in 8..12 {
        star[i] = 100.0;
    }
    let g = on_update_feasibility_guard(&p, &prof, &sel, &theta, &star, &ctx, &LearnerConfig::default());
    assert!(!g.accepted);
    assert_eq!(g.halvings, 5);
    assert_eq!(g.params.w, p.w);

    // The full step lands just past the critical width, half of it inside.
    let delta = 1e-3 * (hc - 0.02);
    let mut star = theta.clone();
    for i in 8..12 {
        star[i] = 0.02 + 10.0 * (hc - 0.02 + delta);
    }
    let g = on_update_feasibility_guard(&p, &prof, &sel, &theta, &star, &ctx, &LearnerConfig::default());
    assert!(g.accepted);
    assert_eq!(g.halvings, 1);
    assert_eq!(g.alpha_eff, 0.05);
    assert!(sdc.satisfied(&g.params.w, 1e-10));
}

#[test]
fn learner_update_records_descent() {
    let p = tilted(double_integrator_params(20, 0.02));
    let prof = p.build_profile(&ThetaSelection::default()).unwrap();
    let learner = Learner::new(LearnerConfig::default(), ThetaSelection::default());
    let sample = near_bound_sample();
    let sdc = corners(0.005);
    let (rec, next) = learner.update(3, &p, &prof, &sample, &sdc).unwrap();
    assert_eq!(rec.sdc_rows, 16);
    assert!(rec.psi_star <= rec.psi);
    if let Some((np, _)) = next {
        assert!(sdc.satisfied(&np.w, 1e-10));
        assert!(rec.alpha_eff > 0.0);
    }
}
