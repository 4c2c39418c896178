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

use nalgebra::DMatrix;

use super::HarnessError;
use crate::tightening::spectral_radius;

/// Stop once successive Riccati iterates differ by at most this in the
/// induced infinity norm.
pub const RICCATI_TOL: f64 = 1e-12;
const MAX_ITER: usize = 1_000_000;

/// Infinite-horizon LQR by Riccati iteration. Returns `(P, K)` with the
/// control law `u = -K x`.
pub fn lqr_design(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), HarnessError> {
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>, HarnessError> {
        let s = r + b.transpose() * p * b;
        let chol = s.cholesky().ok_or(HarnessError::NotStabilizable)?;
        Ok(chol.solve(&(b.transpose() * p * a)))
    };
    let mut p = q.clone();
    for _ in 0..MAX_ITER {
        let k = gain(&p)?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(HarnessError::NotStabilizable);
        }
        let diff = (&next - &p).row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
        p = next;
        if diff <= RICCATI_TOL {
            let k = gain(&p)?;
            if spectral_radius(&(a - b * &k)) >= 1.0 {
                return Err(HarnessError::NotStabilizable);
            }
            return Ok((p, k));
        }
    }
    Err(HarnessError::NotStabilizable)
}
