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

use super::factor::{KktFactorization, RowId, Singleton, Step, WorkingRow};
use super::{QpProblem, SolveResult, SolverError, SolverOptions, WarmStart};

/// Consecutive zero-length steps before switching to Bland's rule.
const BLAND_AFTER: usize = 5;

pub(crate) struct ActiveSet<'a> {
    qp: &'a QpProblem,
    opts: &'a SolverOptions,
    eq_singleton: Vec<Option<Singleton>>,
    in_singleton: Vec<Option<Singleton>>,
    in_norm: Vec<f64>,
}

fn detect_singleton(row: nalgebra::DMatrixView<'_, f64>) -> Option<Singleton> {
    let mut found = None;
    for (j, &v) in row.iter().enumerate() {
        if v != 0.0 {
            if found.is_some() {
                return None;
            }
            found = Some(Singleton { col: j, coeff: v });
        }
    }
    found
}

impl<'a> ActiveSet<'a> {
    pub(crate) fn new(qp: &'a QpProblem, opts: &'a SolverOptions) -> Self {
        let eq_singleton = (0..qp.a_eq.nrows()).map(|i| detect_singleton(qp.a_eq.rows(i, 1))).collect();
        let in_singleton = (0..qp.a_in.nrows()).map(|i| detect_singleton(qp.a_in.rows(i, 1))).collect();
        let in_norm = (0..qp.a_in.nrows()).map(|i| qp.a_in.row(i).amax()).collect();
        Self { qp, opts, eq_singleton, in_singleton, in_norm }
    }

    fn n(&self) -> usize {
        self.qp.n_vars()
    }

    fn row_coeffs(&self, id: RowId) -> DVector<f64> {
        match id {
            RowId::Eq(i) => self.qp.a_eq.row(i).transpose(),
            RowId::In(i) => self.qp.a_in.row(i).transpose(),
        }
    }

    fn rhs(&self, id: RowId) -> f64 {
        match id {
            RowId::Eq(i) => self.qp.b_eq[i],
            RowId::In(i) => self.qp.b_in[i],
        }
    }

    fn singleton(&self, id: RowId) -> Option<Singleton> {
        match id {
            RowId::Eq(i) => self.eq_singleton[i],
            RowId::In(i) => self.in_singleton[i],
        }
    }

    fn feas_tol(&self, id: RowId) -> f64 {
        self.opts.feasibility_tol * (1.0 + self.rhs(id).abs())
    }

    fn working_rows(&self, working: &[RowId]) -> Vec<WorkingRow> {
        working.iter().map(|&id| WorkingRow { id, coeffs: self.row_coeffs(id), singleton: self.singleton(id) }).collect()
    }

    fn factor(&self, working: &[RowId]) -> Result<KktFactorization, SolverError> {
        KktFactorization::new(&self.qp.hessian, self.working_rows(working))
    }

    /// Greedily extends `base` with the candidates that keep the row set
    /// linearly independent. Singleton rows are tried before general rows.
    fn extend_independent(&self, base: &[RowId], candidates: &[RowId]) -> Vec<RowId> {
        // Unit rows orthogonal to every general basis vector are tracked as
        // fixed columns; general basis vectors vanish on those columns.
        let n = self.n();
        let mut fixed = vec![false; n];
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut out = Vec::with_capacity(base.len() + candidates.len());
        let mut try_add = |id: RowId, out: &mut Vec<RowId>| {
            if let Some(s) = self.singleton(id) {
                if fixed[s.col] {
                    return;
                }
                if basis.iter().all(|q| q[s.col] == 0.0) {
                    fixed[s.col] = true;
                    out.push(id);
                    return;
                }
            }
            let v = self.row_coeffs(id);
            let norm = v.norm();
            if norm == 0.0 {
                return;
            }
            let mut r = v / norm;
            for (j, f) in fixed.iter().enumerate() {
                if *f {
                    r[j] = 0.0;
                }
            }
            for _ in 0..2 {
                for q in basis.iter() {
                    let c = q.dot(&r);
                    r.axpy(-c, q, 1.0);
                }
            }
            let rn = r.norm();
            if rn > 1e-9 {
                basis.push(r / rn);
                out.push(id);
            }
        };
        for &id in base {
            try_add(id, &mut out);
        }
        let (singles, general): (Vec<RowId>, Vec<RowId>) = candidates.iter().partition(|&&id| self.singleton(id).is_some());
        for id in singles.into_iter().chain(general) {
            if !out.contains(&id) {
                try_add(id, &mut out);
            }
        }
        out
    }

    fn is_feasible(&self, y: &DVector<f64>) -> bool {
        let ay = &self.qp.a_in * y;
        (0..ay.len()).all(|i| ay[i] - self.qp.b_in[i] <= self.feas_tol(RowId::In(i)))
            && (0..self.qp.a_eq.nrows())
                .all(|i| (self.qp.a_eq.row(i).transpose().dot(y) - self.qp.b_eq[i]).abs() <= self.feas_tol(RowId::Eq(i)))
    }

    fn active_at(&self, y: &DVector<f64>) -> Vec<RowId> {
        let ay = &self.qp.a_in * y;
        (0..ay.len()).filter(|&i| (self.qp.b_in[i] - ay[i]).abs() <= self.feas_tol(RowId::In(i))).map(RowId::In).collect()
    }

    fn working_rhs(&self, working: &[RowId]) -> DVector<f64> {
        DVector::from_iterator(working.len(), working.iter().map(|&id| self.rhs(id)))
    }

    pub(crate) fn solve(&self, warm: Option<&WarmStart>) -> Result<SolveResult, SolverError> {
        let eq_ids: Vec<RowId> = (0..self.qp.a_eq.nrows()).map(RowId::Eq).collect();
        let eq_basis = self.extend_independent(&[], &eq_ids);
        let eq_factor = KktFactorization::rows_only(&self.qp.hessian, self.working_rows(&eq_basis))?;
        let y_eq = eq_factor.particular(&self.working_rhs(&eq_basis));
        for i in 0..self.qp.a_eq.nrows() {
            let r = self.qp.a_eq.row(i).transpose().dot(&y_eq) - self.qp.b_eq[i];
            if r.abs() > self.feas_tol(RowId::Eq(i)) * 10.0 {
                return Err(SolverError::Infeasible);
            }
        }

        if let Some(active) = warm.and_then(|w| w.active_set.as_ref()) {
            let cands: Vec<RowId> = active.iter().filter(|&&i| i < self.qp.a_in.nrows()).map(|&i| RowId::In(i)).collect();
            let working = self.extend_independent(&eq_basis, &cands);
            if let Ok(f) = self.factor(&working) {
                let mut y = f.particular(&self.working_rhs(&working));
                let grad = &self.qp.hessian * &y + &self.qp.linear;
                if let Step::Newton(p) = f.step(&grad) {
                    y += p;
                    if self.is_feasible(&y) {
                        return self.iterate(y, working, f, 0);
                    }
                }
            }
        }

        let mut starts = Vec::new();
        if let Some(p) = warm.and_then(|w| w.point.as_ref()) {
            if p.len() == self.n() {
                starts.push(p.clone());
            }
        }
        starts.push(y_eq.clone());
        for y in starts {
            if self.is_feasible(&y) {
                let working = self.extend_independent(&eq_basis, &self.active_at(&y));
                let f = self.factor(&working)?;
                return self.iterate(y, working, f, 0);
            }
        }

        let (y, phase_one_iters) = self.phase_one(&y_eq)?;
        let working = self.extend_independent(&eq_basis, &self.active_at(&y));
        let f = self.factor(&working)?;
        self.iterate(y, working, f, phase_one_iters)
    }

    /// Minimizes the largest inequality violation `t` starting from `y0`.
    fn phase_one(&self, y0: &DVector<f64>) -> Result<(DVector<f64>, usize), SolverError> {
        let n = self.n();
        let m_in = self.qp.a_in.nrows();
        let m_eq = self.qp.a_eq.nrows();
        let mut a_in = DMatrix::zeros(m_in + 1, n + 1);
        a_in.view_mut((0, 0), (m_in, n)).copy_from(&self.qp.a_in);
        for i in 0..=m_in {
            a_in[(i, n)] = -1.0;
        }
        let mut b_in = DVector::zeros(m_in + 1);
        b_in.rows_mut(0, m_in).copy_from(&self.qp.b_in);
        let mut a_eq = DMatrix::zeros(m_eq, n + 1);
        a_eq.view_mut((0, 0), (m_eq, n)).copy_from(&self.qp.a_eq);
        let mut cost = DVector::zeros(n + 1);
        cost[n] = 1.0;
        let aux = QpProblem::linear_program(cost).with_equalities(a_eq, self.qp.b_eq.clone()).with_inequalities(a_in, b_in);

        let viol = (&self.qp.a_in * y0 - &self.qp.b_in).iter().fold(0.0_f64, |m, &v| m.max(v));
        let mut start = DVector::zeros(n + 1);
        start.rows_mut(0, n).copy_from(y0);
        start[n] = viol;

        let res = super::solve_with(&aux, Some(&WarmStart::from_point(start)), self.opts)?;
        let t = res.y_star[n];
        let scale = 1.0 + self.qp.b_in.amax();
        if t > self.opts.feasibility_tol * scale {
            return Err(SolverError::Infeasible);
        }
        Ok((res.y_star.rows(0, n).into_owned(), res.iterations))
    }

    fn iterate(
        &self,
        mut y: DVector<f64>,
        mut working: Vec<RowId>,
        mut factor: KktFactorization,
        iters_before: usize,
    ) -> Result<SolveResult, SolverError> {
        let m_in = self.qp.a_in.nrows();
        let max_iter = self.opts.max_iterations.unwrap_or(10 * (self.n() + self.qp.a_eq.nrows() + m_in));
        let mut in_working = vec![false; m_in];
        for id in &working {
            if let RowId::In(i) = id {
                in_working[*i] = true;
            }
        }
        let mut ay = &self.qp.a_in * &y;
        let mut degenerate = 0usize;

        for iter in 1..=max_iter {
            let grad = &self.qp.hessian * &y + &self.qp.linear;
            let (p, ray) = match factor.step(&grad) {
                Step::Newton(p) => (p, false),
                Step::Ray(p) => (p, true),
            };
            let pmax = p.amax();

            if !ray && pmax <= 1e-13 * (1.0 + y.amax()) {
                let lambda = factor.multipliers(&grad);
                let tol = self.opts.optimality_tol * (1.0 + grad.amax());
                let bland = degenerate >= BLAND_AFTER;
                let mut drop: Option<(usize, f64)> = None;
                for (pos, id) in working.iter().enumerate() {
                    if let RowId::In(i) = id {
                        let l = lambda[pos];
                        if l < -tol {
                            let better = match drop {
                                None => true,
                                Some((dpos, dl)) => {
                                    if bland {
                                        let RowId::In(di) = working[dpos] else { unreachable!() };
                                        *i < di
                                    } else {
                                        l < dl
                                    }
                                }
                            };
                            if better {
                                drop = Some((pos, l));
                            }
                        }
                    }
                }
                match drop {
                    None => return self.finish(y, working, factor, lambda, iters_before + iter),
                    Some((pos, _)) => {
                        if let RowId::In(i) = working.remove(pos) {
                            in_working[i] = false;
                        }
                        factor = self.factor(&working)?;
                        continue;
                    }
                }
            }

            let ap = &self.qp.a_in * &p;
            let limit = if ray { f64::INFINITY } else { 1.0 };
            // Rows numerically dependent on the working set barely move along
            // `p`; they are skipped instead of making the KKT matrix singular.
            let mut skipped: Vec<usize> = Vec::new();
            let (block, next_factor) = loop {
                let mut block: Option<(usize, f64)> = None;
                for i in 0..m_in {
                    if in_working[i] || skipped.contains(&i) {
                        continue;
                    }
                    if ap[i] > 1e-12 * self.in_norm[i] * pmax {
                        let slack = (self.qp.b_in[i] - ay[i]).max(0.0);
                        let alpha = slack / ap[i];
                        if block.is_none_or(|(_, b)| alpha < b) {
                            block = Some((i, alpha));
                        }
                    }
                }
                match block {
                    Some((i, a)) if a <= limit => {
                        working.push(RowId::In(i));
                        match self.factor(&working) {
                            Ok(f) => break (block, Some(f)),
                            Err(SolverError::SingularKkt) => {
                                working.pop();
                                skipped.push(i);
                            }
                            Err(e) => return Err(e),
                        }
                    }
                    _ => break (block, None),
                }
            };
            let alpha = match block {
                Some((_, a)) => a.min(limit),
                None if ray => return Err(SolverError::Unbounded),
                None => 1.0,
            };
            y.axpy(alpha, &p, 1.0);
            ay.axpy(alpha, &ap, 1.0);
            if alpha * pmax <= 1e-14 * (1.0 + y.amax()) {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            if let (Some((i, _)), Some(f)) = (block, next_factor) {
                in_working[i] = true;
                factor = f;
            }
        }
        Err(SolverError::MaxIterations(iters_before + max_iter))
    }

    fn finish(
        &self,
        y: DVector<f64>,
        working: Vec<RowId>,
        factor: KktFactorization,
        lambda: DVector<f64>,
        iterations: usize,
    ) -> Result<SolveResult, SolverError> {
        let qp = self.qp;
        let m_eq = qp.a_eq.nrows();
        let m_in = qp.a_in.nrows();
        let mut lambda_eq = DVector::zeros(m_eq);
        let mut mu_in = DVector::zeros(m_in);
        let mut active_set = Vec::new();
        let mut min_active = f64::INFINITY;
        for (pos, id) in working.iter().enumerate() {
            match *id {
                RowId::Eq(i) => lambda_eq[i] = lambda[pos],
                RowId::In(i) => {
                    min_active = min_active.min(lambda[pos]);
                    mu_in[i] = lambda[pos].max(0.0);
                    active_set.push(i);
                }
            }
        }

        let grad = &qp.hessian * &y + &qp.linear;
        let stationarity = grad + qp.a_eq.transpose() * &lambda_eq + qp.a_in.transpose() * &mu_in;
        let kkt_residual = stationarity.amax().max(qp.max_violation(&y));
        let slack = &qp.b_in - &qp.a_in * &y;
        let complementarity_gap = (0..m_in).map(|i| (mu_in[i] * slack[i]).abs()).sum();

        let weakly_active: Vec<RowId> = (0..m_in)
            .filter(|&i| !active_set.contains(&i) && slack[i].abs() <= self.feas_tol(RowId::In(i)))
            .map(RowId::In)
            .collect();
        let strict_complementarity = weakly_active.is_empty() && min_active >= self.opts.strict_complementarity_tol;
        let all_eq: Vec<RowId> = (0..m_eq).map(RowId::Eq).collect();
        let mut all_active = all_eq;
        all_active.extend(working.iter().filter(|id| matches!(id, RowId::In(_))));
        all_active.extend(weakly_active.iter().copied());
        let licq = self.extend_independent(&[], &all_active).len() == all_active.len();

        Ok(SolveResult {
            objective: qp.objective(&y),
            y_star: y,
            lambda_eq,
            mu_in,
            active_set,
            iterations,
            kkt_residual,
            complementarity_gap,
            strict_complementarity,
            min_active_multiplier: min_active,
            licq,
            kkt_factorization: factor,
        })
    }
}

/// Rebuilds the KKT factorization for `active_set` from scratch.
pub(crate) fn refactor(qp: &QpProblem, result: &SolveResult) -> Result<KktFactorization, SolverError> {
    let opts = SolverOptions::default();
    let solver = ActiveSet::new(qp, &opts);
    let ids = result.kkt_factorization.row_ids();
    solver.factor(&ids)
}
