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

//! Condensed QP of the slack-relaxed tube MPC.
//!
//! Decision vector: `[u_0..u_{N-1} | σ_path | σ_term | t]`, where `σ_path`
//! relaxes the state-involving rows at stages `1..N-1`, `σ_term` relaxes the
//! terminal rows and `t` holds the 1-norm epigraph of proximity exploration.
//! States are eliminated through `x_k = Φ_k s + Γ_k u + β_k`.

use nalgebra::{DMatrix, DVector};

use super::{MpcError, MpcParams};
use crate::solver::{self, QpProblem, SolverError};
use crate::tightening::TighteningProfile;

/// Tracking reference `(s_r, a_r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
}

impl Reference {
    pub fn zero(n_s: usize, n_a: usize) -> Self {
        Self { s: DVector::zeros(n_s), a: DVector::zeros(n_a) }
    }
}

/// Cost perturbation used to explore without changing the feasible set.
#[derive(Clone, Debug, PartialEq)]
pub enum Exploration {
    /// Adds `qᵀ u_0`.
    Linear(DVector<f64>),
    /// Adds `weight · ‖u_0 − q‖₁`.
    Proximity { q: DVector<f64>, weight: f64 },
}

/// Row bookkeeping `(stage, constraint row, inequality index)`.
#[derive(Clone, Debug)]
pub(crate) struct RowMap {
    pub path: Vec<(usize, usize, usize)>,
    pub input: Vec<(usize, usize, usize)>,
    /// `(terminal row, inequality index)`.
    pub terminal: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct MpcQp {
    pub qp: QpProblem,
    pub(crate) rows: RowMap,
    pub(crate) n_u: usize,
    pub(crate) n_path: usize,
    pub(crate) n_term: usize,
    pub(crate) n_aux: usize,
    pub(crate) phi: Vec<DMatrix<f64>>,
    pub(crate) gam: Vec<DMatrix<f64>>,
    pub(crate) beta: Vec<DVector<f64>>,
    pub(crate) s: DVector<f64>,
    pub(crate) n_a: usize,
}

impl MpcQp {
    pub fn n_vars(&self) -> usize {
        self.n_u + self.n_path + self.n_term + self.n_aux
    }

    /// Columns of the path and terminal slacks.
    pub fn slack_range(&self) -> std::ops::Range<usize> {
        self.n_u..self.n_u + self.n_path + self.n_term
    }

    pub fn slack_total(&self, y: &DVector<f64>) -> f64 {
        self.slack_range().map(|i| y[i].max(0.0)).sum()
    }

    pub fn inputs(&self, y: &DVector<f64>) -> DVector<f64> {
        y.rows(0, self.n_u).into_owned()
    }

    /// Predicted nominal states `x_0..x_N`.
    pub fn states(&self, y: &DVector<f64>) -> Vec<DVector<f64>> {
        let u = self.inputs(y);
        (0..self.phi.len()).map(|k| &self.phi[k] * &self.s + &self.gam[k] * &u + &self.beta[k]).collect()
    }

    /// A feasible point built from an input plan: slacks absorb every
    /// violation of relaxed rows.
    pub fn feasible_start(&self, plan: &DVector<f64>, action: Option<&DVector<f64>>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n_vars());
        y.rows_mut(0, self.n_u).copy_from(plan);
        if let Some(a) = action {
            y.rows_mut(0, self.n_a).copy_from(a);
        }
        // Stages whose pure-input rows fail fall back to zero input.
        for &(k, _, row) in &self.rows.input {
            if k == 0 && action.is_some() {
                continue;
            }
            let lhs = self.qp.a_in.row(row).transpose().dot(&y);
            if lhs > self.qp.b_in[row] {
                for j in 0..self.n_a {
                    y[k * self.n_a + j] = 0.0;
                }
            }
        }
        let au = self.qp.a_in.columns(0, self.n_u) * y.rows(0, self.n_u);
        for &(_, _, row) in &self.rows.path {
            let slack_col = self.slack_col(row);
            y[slack_col] = (au[row] - self.qp.b_in[row]).max(0.0);
        }
        for &(_, row) in &self.rows.terminal {
            let slack_col = self.slack_col(row);
            y[slack_col] = (au[row] - self.qp.b_in[row]).max(0.0);
        }
        if self.n_aux > 0 {
            let base = self.n_u + self.n_path + self.n_term;
            for j in 0..self.n_aux {
                // Rows come in pairs u_0j − t_j <= q_j and −u_0j − t_j <= −q_j.
                let q = self.qp.b_in[self.qp.b_in.len() - 2 * self.n_aux + 2 * j];
                y[base + j] = (y[j] - q).abs();
            }
        }
        y
    }

    fn slack_col(&self, row: usize) -> usize {
        let r = self.qp.a_in.row(row);
        self.slack_range().find(|&c| r[c] == -1.0).expect("relaxed row has a slack")
    }

    /// Whether the constraints are satisfiable with all slacks at zero.
    pub fn unrelaxed_feasible(&self) -> Result<bool, SolverError> {
        let n = self.n_vars();
        let slacks: Vec<usize> = self.slack_range().collect();
        let mut a_eq = DMatrix::zeros(self.qp.a_eq.nrows() + slacks.len(), n);
        a_eq.rows_mut(0, self.qp.a_eq.nrows()).copy_from(&self.qp.a_eq);
        let mut b_eq = DVector::zeros(a_eq.nrows());
        b_eq.rows_mut(0, self.qp.b_eq.len()).copy_from(&self.qp.b_eq);
        for (i, &c) in slacks.iter().enumerate() {
            a_eq[(self.qp.a_eq.nrows() + i, c)] = 1.0;
        }
        let lp = QpProblem::linear_program(DVector::zeros(n))
            .with_equalities(a_eq, b_eq)
            .with_inequalities(self.qp.a_in.clone(), self.qp.b_in.clone());
        match solver::solve(&lp, None) {
            Ok(_) => Ok(true),
            Err(SolverError::Infeasible) => Ok(false),
            Err(e) => Err(e),
        }
    }
}

/// Builds the condensed QP for state `s`. `action` pins `u_0`.
pub fn build_qp(
    params: &MpcParams,
    profile: &TighteningProfile,
    s: &DVector<f64>,
    reference: &Reference,
    action: Option<&DVector<f64>>,
    explore: Option<&Exploration>,
    rho: f64,
) -> Result<MpcQp, MpcError> {
    params.validate().map_err(MpcError::DimensionMismatch)?;
    let ns = params.n_s();
    let na = params.n_a();
    let n = params.horizon;
    let nc = params.c.nrows();
    let mismatch = |what: &str| Err(MpcError::DimensionMismatch(what.to_string()));
    if s.len() != ns || reference.s.len() != ns || reference.a.len() != na {
        return mismatch("state or reference");
    }
    if action.is_some_and(|a| a.len() != na) {
        return mismatch("action");
    }
    if profile.horizon() != n || profile.d[0].len() != nc || profile.g_mat.ncols() != ns {
        return mismatch("profile");
    }
    let n_u = na * n;

    // Condensing matrices.
    let mut phi = vec![DMatrix::identity(ns, ns)];
    let mut gam = vec![DMatrix::zeros(ns, n_u)];
    let mut beta = vec![DVector::zeros(ns)];
    for k in 0..n {
        let next_phi = &params.a * &phi[k];
        let mut next_gam = &params.a * &gam[k];
        next_gam.view_mut((0, k * na), (ns, na)).copy_from(&params.b);
        let next_beta = &params.a * &beta[k] + &params.b_aff;
        phi.push(next_phi);
        gam.push(next_gam);
        beta.push(next_beta);
    }
    let free_x: Vec<DVector<f64>> = (0..=n).map(|k| &phi[k] * s + &beta[k]).collect();

    let state_rows: Vec<usize> = (0..nc).filter(|&r| params.is_state_row(r) && !params.is_duplicate_row(r)).collect();
    let input_rows: Vec<usize> = (0..nc).filter(|&r| !params.is_state_row(r) && !params.is_duplicate_row(r)).collect();
    let n_path = state_rows.len() * n.saturating_sub(1);
    let n_term = profile.g.len();
    let n_aux = if matches!(explore, Some(Exploration::Proximity { .. })) { na } else { 0 };
    let nv = n_u + n_path + n_term + n_aux;

    // Cost.
    let hw = params.stage_weight();
    let pw = params.terminal_weight();
    let z_r = {
        let mut z = DVector::zeros(ns + na);
        z.rows_mut(0, ns).copy_from(&reference.s);
        z.rows_mut(ns, na).copy_from(&reference.a);
        z
    };
    let mut hess = DMatrix::zeros(nv, nv);
    let mut lin = DVector::zeros(nv);
    let mut constant = 0.0;
    let mut disc = 1.0;
    for k in 0..n {
        let mut sk = DMatrix::zeros(ns + na, n_u);
        sk.rows_mut(0, ns).copy_from(&gam[k]);
        for j in 0..na {
            sk[(ns + j, k * na + j)] = 1.0;
        }
        let mut tk = DVector::zeros(ns + na);
        tk.rows_mut(0, ns).copy_from(&free_x[k]);
        let e = &tk - &z_r;
        let he = &hw * &e;
        let hs = &hw * &sk;
        let mut huu = hess.view_mut((0, 0), (n_u, n_u));
        huu += sk.transpose() * hs * (2.0 * disc);
        let mut lu = lin.rows_mut(0, n_u);
        lu += sk.transpose() * (&he * 2.0 + &params.h_lin) * disc;
        constant += disc * (e.dot(&he) + params.h_lin.dot(&tk));
        disc *= params.gamma;
    }
    {
        let e = &free_x[n] - &reference.s;
        let pe = &pw * &e;
        let gn = &gam[n];
        let mut huu = hess.view_mut((0, 0), (n_u, n_u));
        huu += gn.transpose() * (&pw * gn) * (2.0 * disc);
        let mut lu = lin.rows_mut(0, n_u);
        lu += gn.transpose() * (&pe * 2.0 + &params.p_lin) * disc;
        constant += disc * (e.dot(&pe) + params.p_lin.dot(&free_x[n]));
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    for i in n_u..n_u + n_path + n_term {
        lin[i] = rho;
    }

    // Inequalities.
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut map = RowMap { path: Vec::new(), input: Vec::new(), terminal: Vec::new() };
    let mut slack = n_u;
    for k in 1..n {
        for &r in &state_rows {
            let mut a = DVector::zeros(nv);
            let cg = params.c.row(r) * &gam[k];
            a.rows_mut(0, n_u).copy_from(&cg.transpose());
            for j in 0..na {
                a[k * na + j] += params.d[(r, j)];
            }
            a[slack] = -1.0;
            let rhs = -profile.c[k][r] - params.c.row(r).dot(&free_x[k].transpose());
            map.path.push((k, r, rows.len()));
            rows.push((a, rhs));
            slack += 1;
        }
    }
    for k in 0..n {
        for &r in &input_rows {
            let mut a = DVector::zeros(nv);
            for j in 0..na {
                a[k * na + j] = params.d[(r, j)];
            }
            map.input.push((k, r, rows.len()));
            rows.push((a, -profile.c[k][r]));
        }
    }
    for i in 0..n_term {
        let mut a = DVector::zeros(nv);
        let gg = profile.g_mat.row(i) * &gam[n];
        a.rows_mut(0, n_u).copy_from(&gg.transpose());
        a[slack] = -1.0;
        let rhs = -profile.g[i] - profile.g_mat.row(i).dot(&free_x[n].transpose());
        map.terminal.push((i, rows.len()));
        rows.push((a, rhs));
        slack += 1;
    }
    for c in n_u..n_u + n_path + n_term {
        let mut a = DVector::zeros(nv);
        a[c] = -1.0;
        rows.push((a, 0.0));
    }
    match explore {
        Some(Exploration::Linear(q)) => {
            if q.len() != na {
                return mismatch("exploration vector");
            }
            for j in 0..na {
                lin[j] += q[j];
            }
        }
        Some(Exploration::Proximity { q, weight }) => {
            if q.len() != na {
                return mismatch("exploration vector");
            }
            let base = n_u + n_path + n_term;
            for j in 0..na {
                lin[base + j] = *weight;
                let mut a = DVector::zeros(nv);
                a[j] = 1.0;
                a[base + j] = -1.0;
                rows.push((a, q[j]));
                let mut a = DVector::zeros(nv);
                a[j] = -1.0;
                a[base + j] = -1.0;
                rows.push((a, -q[j]));
            }
        }
        None => {}
    }
    let a_in = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
    let b_in = DVector::from_fn(rows.len(), |i, _| rows[i].1);

    let mut qp = QpProblem::new(hess, lin).with_inequalities(a_in, b_in);
    qp.constant = constant;
    if let Some(a) = action {
        let mut a_eq = DMatrix::zeros(na, nv);
        for j in 0..na {
            a_eq[(j, j)] = 1.0;
        }
        qp = qp.with_equalities(a_eq, a.clone());
    }
    Ok(MpcQp { qp, rows: map, n_u, n_path, n_term, n_aux, phi, gam, beta, s: s.clone(), n_a: na })
}
