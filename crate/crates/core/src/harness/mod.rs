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

//! Closed-loop experiment: plant, noise, reference, learning loop and
//! reporting.

pub mod checks;
mod config;
mod episode;
mod lqr;
mod noise;
pub mod report;
pub mod snapshot;
pub mod svg;
mod sweep;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::learner::LearnerError;
use crate::mpc::{MpcError, MpcParams, Reference};
use crate::polytope::{FacetPolytope, PolytopeError};
use crate::tightening::TighteningError;

pub use config::{
    apply_override, ConstraintConfig, CostConfig, ExperimentConfig, ExplorationConfig, LearningConfig, ModelConfig, MpcConfig,
    NoiseConfig, OutputConfig, RunConfig,
};
pub use episode::{run_episode, stage_cost, RunLog, StepRecord, VIOLATION_TOL};
pub use lqr::{lqr_design, RICCATI_TOL};
pub use noise::Octagon;
pub use snapshot::Snapshot;
pub use sweep::{run_sweep, summarize, terminal_area, EpisodeSummary};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("(A, B) is not stabilizable")]
    NotStabilizable,
    #[error("t={t}: {source}")]
    Mpc { t: usize, source: MpcError },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Position reference: `p = 1` for `25 <= t <= 120`, else `-1`; zero
/// velocity and action.
pub fn reference(t: usize) -> (f64, f64, f64) {
    let p = if (25..=120).contains(&t) { 1.0 } else { -1.0 };
    (p, 0.0, 0.0)
}

/// [`reference`] as MPC input for a planar state and scalar action.
pub fn reference_at(t: usize) -> Reference {
    let (p, v, a) = reference(t);
    Reference { s: DVector::from_column_slice(&[p, v]), a: DVector::from_element(1, a) }
}

/// Box constraints as `C x + D u + c̄ <= 0`: state upper rows, state lower
/// rows, action upper rows, action lower rows.
pub fn box_constraints(c: &ConstraintConfig) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (ns, na) = (c.state_lo.len(), c.action_lo.len());
    let rows = 2 * (ns + na);
    let mut cm = DMatrix::zeros(rows, ns);
    let mut dm = DMatrix::zeros(rows, na);
    let mut cb = DVector::zeros(rows);
    for i in 0..ns {
        cm[(i, i)] = 1.0;
        cb[i] = -c.state_hi[i];
        cm[(ns + i, i)] = -1.0;
        cb[ns + i] = c.state_lo[i];
    }
    for j in 0..na {
        dm[(2 * ns + j, j)] = 1.0;
        cb[2 * ns + j] = -c.action_hi[j];
        dm[(2 * ns + na + j, j)] = -1.0;
        cb[2 * ns + na + j] = c.action_lo[j];
    }
    (cm, dm, cb)
}

/// Axis box around `samples`, widened to include the origin and scaled by
/// `inflation`.
pub fn initial_noise_set(samples: &[DVector<f64>], inflation: f64) -> FacetPolytope {
    let n = samples[0].len();
    let lo = DVector::from_fn(n, |i, _| samples.iter().map(|w| w[i]).fold(0.0, f64::min) * inflation);
    let hi = DVector::from_fn(n, |i, _| samples.iter().map(|w| w[i]).fold(0.0, f64::max) * inflation);
    FacetPolytope::axis_box(&lo, &hi)
}

/// MPC parameter for `cfg` with LQR terminal ingredients and noise set `w`.
pub fn build_params(cfg: &ExperimentConfig, w: FacetPolytope) -> Result<MpcParams, HarnessError> {
    let a = cfg.a()?;
    let b = cfg.b()?;
    let q = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.cost.q));
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.cost.r));
    let (p, k) = lqr_design(&a, &b, &q, &r)?;
    let (ns, na) = (a.nrows(), b.ncols());
    let mut hd = DVector::zeros(ns + na);
    hd.rows_mut(0, ns).copy_from(&DVector::from_column_slice(&cfg.cost.q).map(f64::sqrt));
    hd.rows_mut(ns, na).copy_from(&DVector::from_column_slice(&cfg.cost.r).map(f64::sqrt));
    let p_chol = p.cholesky().ok_or(HarnessError::NotStabilizable)?.l();
    let (c, d, c_bar) = box_constraints(&cfg.constraints);
    let params = MpcParams {
        h_chol: DMatrix::from_diagonal(&hd),
        h_lin: DVector::zeros(ns + na),
        p_chol,
        p_lin: DVector::zeros(ns),
        a,
        b,
        b_aff: cfg.b_aff(),
        c,
        d,
        c_bar,
        k,
        w,
        gamma: cfg.mpc.gamma,
        rho: cfg.mpc.rho,
        horizon: cfg.mpc.horizon,
    };
    params.validate().map_err(HarnessError::Config)?;
    Ok(params)
}
