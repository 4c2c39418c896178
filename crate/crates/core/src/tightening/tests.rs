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

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::polytope::FacetPolytope;

struct System {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    c_bar: DVector<f64>,
    k: DMatrix<f64>,
}

fn dare_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..10_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.clone().try_inverse().unwrap() * b.transpose() * &p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let done = (&next - &p).amax() < 1e-13;
        p = next;
        if done {
            break;
        }
    }
    let s = r + b.transpose() * &p * b;
    s.try_inverse().unwrap() * b.transpose() * &p * a
}

fn double_integrator() -> System {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let b = DMatrix::from_column_slice(2, 1, &[0.05, 0.1]);
    let k =
        dare_gain(&a, &b, &DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.01])), &DMatrix::from_element(1, 1, 0.01));
    let mut c = DMatrix::zeros(6, 2);
    let mut d = DMatrix::zeros(6, 1);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    c[(2, 0)] = -1.0;
    c[(3, 1)] = -1.0;
    d[(4, 0)] = 1.0;
    d[(5, 0)] = -1.0;
    let c_bar = DVector::from_column_slice(&[-1.0, -1.0, -1.0, -1.0, -10.0, -10.0]);
    System { a, b, c, d, c_bar, k }
}

fn octagon(r: f64) -> (FacetPolytope, Vec<DVector<f64>>) {
    let verts: Vec<DVector<f64>> = (0..8)
        .map(|i| {
            let t = i as f64 * std::f64::consts::FRAC_PI_4 + std::f64::consts::PI / 8.0;
            DVector::from_column_slice(&[r * t.cos(), r * t.sin()])
        })
        .collect();
    let normals = DMatrix::from_fn(8, 2, |i, j| {
        let t = i as f64 * std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_4;
        if j == 0 {
            t.cos()
        } else {
            t.sin()
        }
    });
    let offsets = DVector::from_element(8, r * (std::f64::consts::PI / 8.0).cos());
    (FacetPolytope::new(normals, offsets).unwrap(), verts)
}

fn input<'a>(s: &'a System, w: &'a FacetPolytope, horizon: usize) -> ProfileInput<'a> {
    ProfileInput { a: &s.a, b: &s.b, c: &s.c, d: &s.d, c_bar: &s.c_bar, k: &s.k, w, horizon }
}

/// Exhaustive maximum of `C_K,r Σ_j A_K^j w_j` over vertex sequences.
fn vertex_sequence_oracle(a_k: &DMatrix<f64>, row: &DVector<f64>, verts: &[DVector<f64>], k: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let total = verts.len().pow(k as u32);
    for code in 0..total {
        let mut c = code;
        let mut acc = 0.0;
        let mut p = DMatrix::identity(a_k.nrows(), a_k.nrows());
        for _ in 0..k {
            let w = &verts[c % verts.len()];
            c /= verts.len();
            acc += row.dot(&(&p * w));
            p = a_k * p;
        }
        best = best.max(acc);
    }
    if k == 0 {
        0.0
    } else {
        best
    }
}

#[test]
fn zero_noise_gives_zero_tightening() {
    let s = double_integrator();
    let w = FacetPolytope::axis_box(&DVector::zeros(2), &DVector::zeros(2));
    let d = tighten_stage(&s.a, &s.b, &s.c, &s.d, &s.k, &w, 5).unwrap();
    assert!(d.iter().all(|dk| dk.amax() < 1e-14));
}

#[test]
fn integrator_tightening_is_linear() {
    let a = DMatrix::identity(2, 2);
    let b = DMatrix::zeros(2, 1);
    let k = DMatrix::zeros(1, 2);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let d = DMatrix::zeros(1, 1);
    let delta = 0.3;
    let w = FacetPolytope::axis_box(&DVector::from_element(2, -delta), &DVector::from_element(2, delta));
    let out = tighten_stage(&a, &b, &c, &d, &k, &w, 6).unwrap();
    for (k, dk) in out.iter().enumerate() {
        assert!((dk[0] - k as f64 * delta).abs() < 1e-12);
    }
}

#[test]
fn stage_tightening_matches_vertex_sequences() {
    let s = double_integrator();
    let (w, verts) = octagon(0.02);
    let d = tighten_stage(&s.a, &s.b, &s.c, &s.d, &s.k, &w, 3).unwrap();
    let (a_k, c_k) = closed_loop(&s.a, &s.b, &s.c, &s.d, &s.k);
    for k in 0..=3 {
        for r in 0..6 {
            let oracle = vertex_sequence_oracle(&a_k, &c_k.row(r).transpose(), &verts, k);
            assert!((d[k][r] - oracle).abs() < 1e-8, "k={k} r={r}");
        }
    }
}

#[test]
fn deadbeat_terminal_set() {
    let a = DMatrix::zeros(2, 2);
    let b = DMatrix::identity(2, 2);
    let k = DMatrix::zeros(2, 2);
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let d = DMatrix::zeros(2, 2);
    let cb = DVector::from_element(2, -1.0);
    let ts = terminal_set(&a, &b, &c, &d, &k, |_| Ok(cb.clone())).unwrap();
    assert_eq!(ts.k_prime, 1);
    assert_eq!(ts.g, c);
}

#[test]
fn unstable_closed_loop_is_rejected() {
    let s = double_integrator();
    let k = DMatrix::zeros(1, 2);
    let cb = s.c_bar.clone();
    let err = terminal_set(&s.a, &s.b, &s.c, &s.d, &k, |_| Ok(cb.clone())).unwrap_err();
    assert!(matches!(err, TighteningError::UnstableClosedLoop(_)));
}

#[test]
fn inflated_noise_empties_terminal_set() {
    let s = double_integrator();
    let (w, _) = octagon(5.0);
    let err = build_profile(&input(&s, &w, 20), &SensitivitySelection::none()).unwrap_err();
    assert_eq!(err, TighteningError::EmptyTerminalSet);
}

#[test]
fn scalar_terminal_tightening_is_geometric() {
    let a = DMatrix::from_element(1, 1, 0.7);
    let b = DMatrix::zeros(1, 1);
    let k = DMatrix::zeros(1, 1);
    let g = DMatrix::from_element(1, 1, 1.0);
    let delta = 0.1;
    let w = FacetPolytope::axis_box(&DVector::from_element(1, -delta), &DVector::from_element(1, delta));
    for kp in 0..8 {
        let h = tighten_terminal(&g, &a, &b, &k, &w, kp).unwrap();
        let oracle = delta * (1.0 - 0.7f64.powi(kp as i32)) / (1.0 - 0.7);
        assert!((h[0] - oracle).abs() < 1e-12);
    }
    let zero = FacetPolytope::axis_box(&DVector::zeros(1), &DVector::zeros(1));
    assert_eq!(tighten_terminal(&g, &a, &b, &k, &zero, 5).unwrap()[0], 0.0);
}

#[test]
fn terminal_tightening_matches_vertex_sequences() {
    let s = double_integrator();
    let (w, verts) = octagon(0.02);
    let (a_k, c_k) = closed_loop(&s.a, &s.b, &s.c, &s.d, &s.k);
    let g = &c_k * &a_k;
    for kp in 0..=3 {
        let h = tighten_terminal(&g, &s.a, &s.b, &s.k, &w, kp).unwrap();
        for r in 0..g.nrows() {
            let oracle = vertex_sequence_oracle(&a_k, &g.row(r).transpose(), &verts, kp);
            assert!((h[r] - oracle).abs() < 1e-8);
        }
    }
}

#[test]
fn redundancy_examples() {
    let g = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
    let gv = DVector::from_column_slice(&[-1.0, -1.0, -1.0, -1.0, -1.0]);
    let (gr, _, kept) = remove_redundant(&g, &gv).unwrap();
    assert_eq!(kept, vec![0, 2, 3, 4]);
    assert_eq!(gr.nrows(), 4);
    let gv = DVector::from_column_slice(&[-1.0, -0.5, -1.0, -1.0, -1.0]);
    let (_, _, kept) = remove_redundant(&g, &gv).unwrap();
    assert_eq!(kept, vec![1, 2, 3, 4]);
    // Exactly touching rows are kept.
    let g = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
    let gv = DVector::from_column_slice(&[-1.0, -1.0, -1.0, -1.0, -2.0]);
    let (_, _, kept) = remove_redundant(&g, &gv).unwrap();
    assert_eq!(kept.len(), 5);
}

fn support_of(g: &DMatrix<f64>, gv: &DVector<f64>, dir: &DVector<f64>) -> f64 {
    FacetPolytope::new(g.clone(), -gv).unwrap().support(dir).unwrap().value
}

#[test]
fn profile_terminal_set_keeps_support() {
    let s = double_integrator();
    let (w, _) = octagon(0.02);
    let p = build_profile(&input(&s, &w, 20), &SensitivitySelection::none()).unwrap();
    assert!(p.k_prime >= 1);
    // Unreduced stack from the same profile data.
    let nc = s.c.nrows();
    let (a_k, c_k) = closed_loop(&s.a, &s.b, &s.c, &s.d, &s.k);
    let full = tighten_stage(&s.a, &s.b, &s.c, &s.d, &s.k, &w, p.k_prime + 20).unwrap();
    let mut g = DMatrix::zeros(nc * p.k_prime, 2);
    let mut gv = DVector::zeros(nc * p.k_prime);
    let mut pw = c_k.clone();
    for l in 0..p.k_prime {
        for r in 0..nc {
            g.set_row(l * nc + r, &pw.row(r));
            gv[l * nc + r] = s.c_bar[r] + full[l + 20][r];
        }
        pw = &pw * &a_k;
    }
    assert!(p.g_mat.nrows() < g.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    for _ in 0..64 {
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = DVector::from_column_slice(&[t.cos(), t.sin()]);
        let a = support_of(&g, &gv, &dir);
        let b = support_of(&p.g_mat, &p.g, &dir);
        assert!((a - b).abs() < 1e-9);
    }
}

fn sample_in(g: &DMatrix<f64>, gv: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let hi = DVector::from_fn(2, |i, _| {
        let mut e = DVector::zeros(2);
        e[i] = 1.0;
        support_of(g, gv, &e)
    });
    let lo = DVector::from_fn(2, |i, _| {
        let mut e = DVector::zeros(2);
        e[i] = -1.0;
        -support_of(g, gv, &e)
    });
    loop {
        let x = DVector::from_fn(2, |i, _| rng.random_range(lo[i]..=hi[i]));
        if (g * &x + gv).max() <= 0.0 {
            return x;
        }
    }
}

#[test]
fn terminal_set_is_robustly_invariant() {
    let s = double_integrator();
    let (w, verts) = octagon(0.02);
    let p = build_profile(&input(&s, &w, 20), &SensitivitySelection::none()).unwrap();
    let (a_k, c_k) = closed_loop(&s.a, &s.b, &s.c, &s.d, &s.k);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let x0 = sample_in(&p.g_mat, &p.g, &mut rng);
        for _ in 0..20 {
            let mut x = x0.clone();
            for _ in 0..=2 * p.k_prime {
                assert!((&c_k * &x + &s.c_bar).max() <= 1e-9);
                x = &a_k * x + &verts[rng.random_range(0..8)];
            }
        }
    }
}

#[test]
fn w_sensitivities_match_finite_differences() {
    let s = double_integrator();
    let (w, _) = octagon(0.02);
    let sel = SensitivitySelection { w: true, ..Default::default() };
    let p = build_profile(&input(&s, &w, 20), &sel).unwrap();
    assert_eq!(p.weak_summands, 0);
    // The top and bottom facets are parallel to the velocity rows.
    assert!(p.face_summands > 0);
    let nf = w.n_facets();
    let h = 1e-7;
    for col in 0..nf * 3 {
        let mut wp = w.clone();
        let mut wm = w.clone();
        if col < nf * 2 {
            wp.normals[(col / 2, col % 2)] += h;
            wm.normals[(col / 2, col % 2)] -= h;
        } else {
            wp.offsets[col - 2 * nf] += h;
            wm.offsets[col - 2 * nf] -= h;
        }
        let structure = p.structure();
        let pp = profile_with(&s, &wp, &structure);
        let pm = profile_with(&s, &wm, &structure);
        for k in 0..=20 {
            for r in 0..6 {
                let fd = (pp.0[k][r] - pm.0[k][r]) / (2.0 * h);
                let an = p.sens_d[k][(r, col)];
                assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1.0), "d k={k} r={r} col={col}: {fd} vs {an}");
            }
        }
        for i in 0..p.g.len() {
            let fd = (pp.1[i] - pm.1[i]) / (2.0 * h);
            assert!((fd - p.sens_g[(i, col)]).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }
}

/// Stage tightening and terminal offsets for a fixed structure.
fn profile_with(s: &System, w: &FacetPolytope, st: &ProfileStructure) -> (Vec<DVector<f64>>, DVector<f64>) {
    let d = tighten_stage(&s.a, &s.b, &s.c, &s.d, &s.k, w, 40 + st.k_prime).unwrap();
    let g = DVector::from_fn(st.terminal_rows.len(), |i, _| {
        let (r, l) = st.terminal_rows[i];
        s.c_bar[r] + d[l + 20][r]
    });
    (d, g)
}

#[test]
fn gain_sensitivities_are_consistent() {
    let s = double_integrator();
    let (w, _) = octagon(0.02);
    let sel = SensitivitySelection { w: true, k: true, ..Default::default() };
    let p = build_profile(&input(&s, &w, 20), &sel).unwrap();
    let base = 8 * 3;
    assert_eq!(p.sens_d[0].ncols(), base + 2);
    // Compare against a coarser central difference of the stage tightening.
    let h = 1e-5;
    for j in 0..2 {
        let mut kp = s.k.clone();
        kp[(0, j)] += h;
        let mut km = s.k.clone();
        km[(0, j)] -= h;
        let dp = tighten_stage(&s.a, &s.b, &s.c, &s.d, &kp, &w, 20).unwrap();
        let dm = tighten_stage(&s.a, &s.b, &s.c, &s.d, &km, &w, 20).unwrap();
        for k in 0..=20 {
            for r in 0..6 {
                let fd = (dp[k][r] - dm[k][r]) / (2.0 * h);
                assert!((fd - p.sens_d[k][(r, base + j)]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }
}

#[test]
fn zero_direction_has_zero_sensitivity() {
    let w = FacetPolytope::unit_box(2);
    let s = w.support(&DVector::zeros(2)).unwrap();
    assert!(s.multipliers.iter().all(|&m| m == 0.0));
}

#[test]
fn spectral_radius_of_rotation() {
    let t: f64 = 0.3;
    let r = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]) * 0.9;
    assert!((spectral_radius(&r) - 0.9).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tightening_is_monotone_and_shrinks_with_w(r in 0.001f64..0.05, lambda in 0.0f64..1.0) {
        let s = double_integrator();
        let (w, _) = octagon(r);
        let d = tighten_stage(&s.a, &s.b, &s.c, &s.d, &s.k, &w, 20).unwrap();
        prop_assert!(d[0].amax() == 0.0);
        for k in 0..20 {
            for i in 0..6 {
                prop_assert!(d[k + 1][i] >= d[k][i] - 1e-15);
                prop_assert!(d[k][i] >= 0.0);
            }
        }
        let mut small = w.clone();
        small.offsets *= lambda;
        let ds = tighten_stage(&s.a, &s.b, &s.c, &s.d, &s.k, &small, 20).unwrap();
        for k in 0..=20 {
            for i in 0..6 {
                prop_assert!(ds[k][i] <= d[k][i] + 1e-12);
            }
        }
    }
}
