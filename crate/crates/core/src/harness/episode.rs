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

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_params, initial_noise_set, reference_at, ExperimentConfig, HarnessError, Octagon, Snapshot};
use crate::datastore::{Datastore, DatastoreConfig, ResidualRecord, Transition};
use crate::learner::{Learner, LearnerConfig, Sample, UpdateRecord, WarmHint};
use crate::mpc::{EvalOptions, Exploration, Mpc, MpcParams, PolicyEval, Reference, ThetaSelection};
use crate::polytope::{planar_vertices, FacetPolytope};
use crate::tightening::{closed_loop, TighteningProfile};

/// Constraint residual above which a step counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-9;

const NOISE_STREAM: u64 = 1;
const EXPLORE_STREAM: u64 = 2;
const CLOUD_STREAM: u64 = 3;

/// One closed-loop step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub w: DVector<f64>,
    /// Optimal MPC value at `s` (of the perturbed problem on exploration
    /// steps).
    pub value: f64,
    /// TD residual before the update; NaN when learning is off or the
    /// sample was skipped.
    pub psi: f64,
    pub slack_total: f64,
    /// Predicted constraints with positive tightening active in the plan.
    pub active_tightenings: usize,
    pub hull_size: usize,
    pub stage_cost: f64,
    /// `max(C s + D a + c̄)`.
    pub constraint_residual: f64,
    pub explored: bool,
    /// The residual ingested after this step escaped `W`.
    pub sdc_event: bool,
}

impl StepRecord {
    pub fn violated(&self) -> bool {
        self.constraint_residual > VIOLATION_TOL
    }
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub learning: Vec<UpdateRecord>,
    /// Residuals ingested during the run (pre-run samples excluded).
    pub residuals: Vec<ResidualRecord>,
    pub initial_params: MpcParams,
    pub final_params: MpcParams,
}

impl RunLog {
    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| r.violated()).count()
    }

    /// Violations not preceded by a residual escaping `W`.
    pub fn unexplained_violations(&self) -> usize {
        self.records.iter().enumerate().filter(|(i, r)| r.violated() && (*i == 0 || !self.records[i - 1].sdc_event)).count()
    }

    pub fn sdc_events(&self) -> usize {
        self.records.iter().filter(|r| r.sdc_event).count()
    }

    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.stage_cost).sum()
    }

    pub fn max_slack(&self) -> f64 {
        self.records.iter().map(|r| r.slack_total).fold(0.0, f64::max)
    }
}

/// `(s − s_r)ᵀ Q (s − s_r) + (a − a_r)ᵀ R (a − a_r)` with diagonal weights.
pub fn stage_cost(cfg: &ExperimentConfig, s: &DVector<f64>, a: &DVector<f64>, r: &Reference) -> f64 {
    let xs: f64 = cfg.cost.q.iter().enumerate().map(|(i, q)| q * (s[i] - r.s[i]).powi(2)).sum();
    let us: f64 = cfg.cost.r.iter().enumerate().map(|(i, q)| q * (a[i] - r.a[i]).powi(2)).sum();
    xs + us
}

fn no_sensitivities() -> ThetaSelection {
    ThetaSelection::new(vec![])
}

fn count_active_tightenings(params: &MpcParams, profile: &TighteningProfile, eval: &PolicyEval) -> usize {
    let na = params.n_a();
    let mut count = 0;
    for k in 1..params.horizon {
        let u = eval.plan.rows(k * na, na);
        let lhs = &params.c * &eval.states[k] + &params.d * u + &profile.c[k];
        for r in 0..params.c.nrows() {
            if profile.d[k][r] > 0.0 && lhs[r] >= -1e-7 {
                count += 1;
            }
        }
    }
    count
}

struct Loop<'a> {
    cfg: &'a ExperimentConfig,
    params: MpcParams,
    profile: TighteningProfile,
    octagon: Octagon,
    store: Datastore,
    n_pre: usize,
}

impl Loop<'_> {
    fn snapshot(&self, t: usize, s: &DVector<f64>, eval: &PolicyEval) -> Snapshot {
        let p = &self.params;
        let ns = p.n_s();
        let state_rows: Vec<usize> = (0..p.c.nrows()).filter(|&r| p.is_state_row(r) && p.d.row(r).amax() == 0.0).collect();
        let c_s = DMatrix::from_fn(state_rows.len(), ns, |i, j| p.c[(state_rows[i], j)]);
        let set_with = |off: &DVector<f64>| FacetPolytope {
            normals: c_s.clone(),
            offsets: DVector::from_fn(state_rows.len(), |i, _| -off[state_rows[i]]),
        };
        let tightened = (1..p.horizon).map(|k| set_with(&self.profile.c[k])).collect();
        let feedback_set = FacetPolytope { normals: &p.c - &p.d * &p.k, offsets: -&p.c_bar };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.run.seed ^ t as u64);
        rng.set_stream(CLOUD_STREAM);
        let rpi_cloud =
            if ns == 2 { rpi_cloud(p, self.profile.k_prime, self.cfg.output.rpi_samples, &mut rng) } else { Vec::new() };
        Snapshot {
            t,
            state: s.clone(),
            w_set: p.w.clone(),
            hull: self.store.hull().clone(),
            terminal: FacetPolytope { normals: self.profile.g_mat.clone(), offsets: -&self.profile.g },
            state_set: set_with(&p.c_bar),
            feedback_set,
            tightened,
            predicted: eval.states.clone(),
            rpi_cloud,
            residuals: self.store.raw_residuals().skip(self.n_pre).cloned().collect(),
            noise_support: if self.cfg.noise.circumradius > 0.0 { self.octagon.vertices() } else { Vec::new() },
        }
    }
}

/// End points of error rollouts `e+ = (A − BK) e + w` from the origin with
/// disturbances drawn among the vertices of `W`.
fn rpi_cloud(p: &MpcParams, k_prime: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let verts = planar_vertices(&p.w);
    if verts.is_empty() {
        return Vec::new();
    }
    let (a_k, _) = closed_loop(&p.a, &p.b, &p.c, &p.d, &p.k);
    let len = (2 * k_prime).max(20);
    (0..n)
        .map(|_| {
            let mut e = DVector::zeros(2);
            for _ in 0..len {
                let v = verts[rng.random_range(0..verts.len())];
                e = &a_k * e + DVector::from_column_slice(&v);
            }
            e
        })
        .collect()
}

/// Runs one closed-loop learning episode.
pub fn run_episode(cfg: &ExperimentConfig) -> Result<RunLog, HarnessError> {
    cfg.validate()?;
    let seed = cfg.run.seed;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(NOISE_STREAM);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(seed);
    explore_rng.set_stream(EXPLORE_STREAM);

    let octagon = Octagon::new(cfg.noise.circumradius);
    let ns = cfg.n_s();
    let draw = |rng: &mut ChaCha8Rng| if cfg.noise.circumradius > 0.0 { octagon.sample(rng) } else { DVector::zeros(ns) };

    // Residuals collected before the run size the initial noise set.
    let pre: Vec<DVector<f64>> = (0..cfg.learning.initial_samples).map(|_| draw(&mut noise_rng)).collect();
    let mut w_set = initial_noise_set(&pre, cfg.learning.inflation);
    let mut store = Datastore::new(ns, DatastoreConfig { warmup: cfg.learning.warmup, ..Default::default() });
    for w in &pre {
        store.ingest_residual(0, w, &mut w_set)?;
    }
    if cfg.noise.seed_support && cfg.noise.circumradius > 0.0 {
        for v in octagon.vertices() {
            store.ingest_residual(0, &v, &mut w_set)?;
        }
    }
    let n_pre = store.log().len();

    let params = build_params(cfg, w_set)?;
    let profile = params.build_profile(&no_sensitivities())?;
    let initial_params = params.clone();
    let sel = cfg.theta_selection()?;
    let learner = Learner::new(
        LearnerConfig {
            alpha: cfg.learning.alpha,
            eps: cfg.learning.eps,
            tol: cfg.learning.tol,
            max_iter: cfg.learning.max_iter,
            guard_halvings: cfg.learning.guard_halvings,
            ..Default::default()
        },
        sel,
    );
    let mut lp = Loop { cfg, params, profile, octagon: octagon.clone(), store, n_pre };

    let (a_mat, b_mat, b_aff) = (cfg.a()?, cfg.b()?, cfg.b_aff());
    let mut s = DVector::from_column_slice(&cfg.run.initial_state);
    let mut records = Vec::with_capacity(cfg.run.steps);
    let mut snapshots = Vec::new();
    let mut learning = Vec::new();
    let mut active: Option<Vec<usize>> = None;
    let mut plan: Option<DVector<f64>> = None;

    for t in 0..cfg.run.steps {
        let r = reference_at(t);
        let explored = cfg.exploration.enabled && (t + 1) % cfg.exploration.every == 0;
        let mpc = Mpc::new(&lp.params, &lp.profile);
        let opts = EvalOptions { selection: None, plan: plan.as_ref(), active_set: active.as_deref() };
        let eval = if explored {
            let na = cfg.n_a();
            let q = DVector::from_fn(na, |_, _| explore_rng.random_range(-cfg.exploration.q_box..=cfg.exploration.q_box));
            mpc.explore_action(&s, &r, &Exploration::Linear(q), &opts)
        } else {
            mpc.eval_v_policy(&s, &r, &opts)
        }
        .map_err(|source| HarnessError::Mpc { t, source })?;
        let a = eval.action.clone();
        let residual = (&lp.params.c * &s + &lp.params.d * &a + &lp.params.c_bar).max();
        if cfg.output.snapshots.contains(&t) {
            snapshots.push(lp.snapshot(t, &s, &eval));
        }
        let active_tightenings = count_active_tightenings(&lp.params, &lp.profile, &eval);
        if !explored {
            active = Some(eval.active_set.clone());
            plan = Some(WarmHint::from_eval(&eval).shifted_plan(cfg.n_a()));
        }

        let w = draw(&mut noise_rng);
        let s_plus = &a_mat * &s + &b_mat * &a + &b_aff + &w;
        let tr = Transition { s: s.clone(), a: a.clone(), s_plus: s_plus.clone(), t };
        let report = lp.store.ingest(&tr, &a_mat, &b_mat, &b_aff, &mut lp.params.w)?;
        if report.sdc_violated {
            info!("t={t}: noise set enlarged");
            lp.profile = lp.params.build_profile(&no_sensitivities())?;
        }

        let cost = super::stage_cost(cfg, &s, &a, &r);
        let mut psi = f64::NAN;
        if cfg.learning.enabled {
            // The MPC predicts with a constant reference, so the target holds it too.
            let sample = Sample {
                s: s.clone(),
                a: a.clone(),
                s_plus: s_plus.clone(),
                cost,
                reference: r.clone(),
                reference_plus: r.clone(),
                warm: Some(WarmHint::from_eval(&eval)),
            };
            let (rec, next) = learner.update(t, &lp.params, &lp.profile, &sample, &lp.store.sdc_rows())?;
            psi = rec.psi;
            learning.push(rec);
            if let Some((p, prof)) = next {
                lp.params = p;
                lp.profile = prof;
            }
        }

        records.push(StepRecord {
            t,
            s: s.clone(),
            a,
            w,
            value: eval.value,
            psi,
            slack_total: eval.slack_total,
            active_tightenings,
            hull_size: lp.store.hull().len(),
            stage_cost: cost,
            constraint_residual: residual,
            explored,
            sdc_event: report.sdc_violated,
        });
        s = s_plus;
    }

    Ok(RunLog {
        seed,
        records,
        snapshots,
        learning,
        residuals: lp.store.log()[lp.n_pre..].to_vec(),
        initial_params,
        final_params: lp.params,
    })
}
