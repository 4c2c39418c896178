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

//! Quick oracle checks behind the `check` subcommand.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_params, lqr_design, ExperimentConfig, Octagon};
use crate::mpc::{build_qp, EvalOptions, Mpc, ParamGroup, Reference, ThetaSelection, SLACK_TOL};
use crate::polytope::{hull_membership, planar_vertices, VertexPolytope};
use crate::solver::{self, QpProblem};
use crate::tightening::{closed_loop, tighten_stage};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn default_params() -> crate::mpc::MpcParams {
    let cfg = ExperimentConfig::default();
    build_params(&cfg, Octagon::new(cfg.noise.circumradius).facets()).expect("default config is valid")
}

fn riccati() -> CheckResult {
    let cfg = ExperimentConfig::default();
    let (a, b) = (cfg.a().unwrap(), cfg.b().unwrap());
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.cost.q));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.cost.r));
    match lqr_design(&a, &b, &q, &r) {
        Ok((p, k)) => {
            let s = &r + b.transpose() * &p * &b;
            let rhs = &q + a.transpose() * &p * &a - a.transpose() * &p * &b * s.try_inverse().unwrap() * b.transpose() * &p * &a;
            let res = (rhs - &p).amax();
            let rad = crate::tightening::spectral_radius(&(&a - &b * k));
            result("lqr", res <= 1e-10 && rad < 1.0, format!("residual {res:.2e}, spectral radius {rad:.4}"))
        }
        Err(e) => result("lqr", false, e.to_string()),
    }
}

fn octagon() -> CheckResult {
    let oct = Octagon::new(0.02);
    let f = oct.facets();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let worst = (0..10_000).map(|_| f.facet_violation(&oct.sample(&mut rng))).fold(f64::NEG_INFINITY, f64::max);
    result("octagon", worst <= 0.0, format!("largest facet value {worst:.2e}"))
}

/// Stage tightening against brute-force maximization over vertex sequences.
fn tightening() -> CheckResult {
    let p = default_params();
    let (a_k, c_k) = closed_loop(&p.a, &p.b, &p.c, &p.d, &p.k);
    let verts: Vec<DVector<f64>> = planar_vertices(&p.w).iter().map(|v| DVector::from_column_slice(v)).collect();
    let d = match tighten_stage(&p.a, &p.b, &p.c, &p.d, &p.k, &p.w, 3) {
        Ok(d) => d,
        Err(e) => return result("tightening", false, e.to_string()),
    };
    let mut worst = 0.0_f64;
    for (k, dk) in d.iter().enumerate().take(4).skip(1) {
        let mut best = DVector::from_element(p.c.nrows(), f64::NEG_INFINITY);
        let total = verts.len().pow(k as u32);
        for idx in 0..total {
            let mut e = DVector::zeros(2);
            let mut rem = idx;
            for _ in 0..k {
                e = &a_k * e + &verts[rem % verts.len()];
                rem /= verts.len();
            }
            best = best.zip_map(&(&c_k * e), f64::max);
        }
        worst = worst.max((dk - best).amax());
    }
    result("tightening", worst <= 1e-8, format!("largest deviation {worst:.2e}"))
}

fn hull() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let oct = Octagon::new(1.0);
    let mut hull = VertexPolytope::new(Vec::new());
    for _ in 0..60 {
        hull.insert(&oct.sample(&mut rng)).unwrap();
    }
    let pts: Vec<[f64; 2]> = hull.vertices.iter().map(|v| [v[0], v[1]]).collect();
    let mut bad = 0;
    for _ in 0..200 {
        let q = DVector::from_column_slice(&[rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)]);
        let lp = hull_membership(&q, &hull).unwrap().inside;
        let geo = inside_polygon(&pts, [q[0], q[1]]);
        if lp != geo {
            bad += 1;
        }
    }
    result("hull", bad == 0, format!("{bad} disagreements in 200 points"))
}

/// Point-in-convex-polygon test on the hull of `pts`.
fn inside_polygon(pts: &[[f64; 2]], q: [f64; 2]) -> bool {
    let n = pts.len();
    let c = pts.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n as f64, a[1] + p[1] / n as f64]);
    let mut sorted = pts.to_vec();
    sorted.sort_by(|a, b| (a[1] - c[1]).atan2(a[0] - c[0]).partial_cmp(&(b[1] - c[1]).atan2(b[0] - c[0])).unwrap());
    (0..n).all(|i| {
        let (a, b) = (sorted[i], sorted[(i + 1) % n]);
        (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]) >= -1e-12
    })
}

fn exact_penalty() -> CheckResult {
    let p = default_params();
    let prof = p.build_profile(&ThetaSelection::new(vec![])).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    let mut n = 0;
    while n < 10 {
        let s = DVector::from_column_slice(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let r = Reference { s: DVector::from_column_slice(&[rng.random_range(-1.0..1.0), 0.0]), a: DVector::zeros(1) };
        let mqp = build_qp(&p, &prof, &s, &r, None, None, p.rho()).unwrap();
        let slack_cols: Vec<usize> = (mqp.n_u..mqp.n_u + mqp.n_path + mqp.n_term).collect();
        let a_eq = DMatrix::from_fn(slack_cols.len(), mqp.n_vars(), |i, j| if slack_cols[i] == j { 1.0 } else { 0.0 });
        let hard = QpProblem { a_eq, b_eq: DVector::zeros(slack_cols.len()), ..mqp.qp.clone() };
        let Ok(h) = solver::solve(&hard, None) else { continue };
        let soft = Mpc::new(&p, &prof).eval_v_policy(&s, &r, &EvalOptions::default()).unwrap();
        if soft.slack_total > SLACK_TOL {
            worst = f64::INFINITY;
        }
        worst = worst.max((mqp.inputs(&h.y_star) - &soft.plan).amax());
        n += 1;
    }
    result("exact_penalty", worst <= 1e-8, format!("largest plan deviation {worst:.2e}"))
}

fn gradient() -> CheckResult {
    let p = default_params();
    let sel = ThetaSelection::new(vec![ParamGroup::WNormals, ParamGroup::WOffsets, ParamGroup::CBar]);
    let prof = p.build_profile(&sel).unwrap();
    let s = DVector::from_column_slice(&[0.8, 0.3]);
    let r = Reference { s: DVector::from_column_slice(&[1.2, 0.0]), a: DVector::zeros(1) };
    let a = DVector::from_element(1, -0.5);
    let q = Mpc::new(&p, &prof).eval_q(&s, &r, &a, &EvalOptions { selection: Some(&sel), ..Default::default() }).unwrap();
    let Some(g) = q.grad else { return result("gradient", false, "strict complementarity fails".into()) };
    let theta = sel.theta(&p);
    let h = 1e-6;
    let value = |t: &DVector<f64>| {
        let pp = sel.apply(&p, t);
        let prof = pp.build_profile(&ThetaSelection::new(vec![])).unwrap();
        Mpc::new(&pp, &prof).eval_q(&s, &r, &a, &EvalOptions::default()).unwrap().value
    };
    let mut worst = 0.0_f64;
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        tp[i] += h;
        let mut tm = theta.clone();
        tm[i] -= h;
        let fd = (value(&tp) - value(&tm)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(1.0));
    }
    result("gradient", worst <= 1e-5, format!("largest relative deviation {worst:.2e}"))
}

/// Runs every check.
pub fn run_all() -> Vec<CheckResult> {
    vec![riccati(), octagon(), tightening(), hull(), exact_penalty(), gradient()]
}
