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

//! Fixtures shared by unit tests.

use nalgebra::{DMatrix, DVector};

use crate::mpc::MpcParams;
use crate::polytope::FacetPolytope;

pub(crate) fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut p = q.clone();
    for _ in 0..10_000 {
        let s = r + b.transpose() * &p * b;
        let k = s.try_inverse().unwrap() * b.transpose() * &p * a;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let done = (&next - &p).amax() < 1e-13;
        p = next;
        if done {
            break;
        }
    }
    let k = (r + b.transpose() * &p * b).try_inverse().unwrap() * b.transpose() * &p * a;
    (p, k)
}

/// Double integrator with box state and input constraints and a box W.
pub(crate) fn double_integrator_params(horizon: usize, w_half: f64) -> MpcParams {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let b = DMatrix::from_column_slice(2, 1, &[0.05, 0.1]);
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.01]));
    let r = DMatrix::from_element(1, 1, 0.01);
    let (p, k) = dare(&a, &b, &q, &r);
    let mut c = DMatrix::zeros(6, 2);
    let mut d = DMatrix::zeros(6, 1);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    c[(2, 0)] = -1.0;
    c[(3, 1)] = -1.0;
    d[(4, 0)] = 1.0;
    d[(5, 0)] = -1.0;
    MpcParams {
        h_chol: DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.1, 0.1])),
        h_lin: DVector::zeros(3),
        p_chol: p.cholesky().unwrap().l(),
        p_lin: DVector::zeros(2),
        a,
        b,
        b_aff: DVector::zeros(2),
        c,
        d,
        c_bar: DVector::from_column_slice(&[-1.0, -1.0, -1.0, -1.0, -10.0, -10.0]),
        k,
        w: FacetPolytope::axis_box(&DVector::from_element(2, -w_half), &DVector::from_element(2, w_half)),
        gamma: 0.99,
        rho: None,
        horizon,
    }
}
