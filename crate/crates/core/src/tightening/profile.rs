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

//! Full tightening pipeline with parameter sensitivities.

use nalgebra::{DMatrix, DVector};

use super::{check_stable, closed_loop, remove_redundant, terminal_set, TighteningError};
use crate::polytope::{FacetPolytope, PolytopeError};
use crate::solver::{self, QpProblem, SolverError, WarmStart};

/// Step used for finite-difference sensitivities of `K`, `C` and `D`.
pub const FD_STEP: f64 = 1e-6;

/// Support values `s_{r,j} = h_W(rows_r A_K^j)` computed on demand, with
/// running prefix sums and, optionally, gradients with respect to the facet
/// data of `W`.
pub(crate) struct SummandTable<'a> {
    a_k: DMatrix<f64>,
    power: DMatrix<f64>,
    w: &'a FacetPolytope,
    with_grads: bool,
    prefix: Vec<DVector<f64>>,
    prefix_grads: Vec<DMatrix<f64>>,
    warm: Vec<Option<WarmStart>>,
    pub(crate) weak: usize,
    pub(crate) face: usize,
}

impl<'a> SummandTable<'a> {
    pub(crate) fn new(a_k: DMatrix<f64>, rows: DMatrix<f64>, w: &'a FacetPolytope, with_grads: bool) -> Self {
        let nr = rows.nrows();
        let np = w_param_count(w);
        Self {
            a_k,
            power: rows,
            w,
            with_grads,
            prefix: vec![DVector::zeros(nr)],
            prefix_grads: if with_grads { vec![DMatrix::zeros(nr, np)] } else { Vec::new() },
            warm: vec![None; nr],
            weak: 0,
            face: 0,
        }
    }

    /// Makes prefix sums available up to `k` summands.
    pub(crate) fn ensure(&mut self, k: usize) -> Result<(), TighteningError> {
        let nr = self.power.nrows();
        let nf = self.w.n_facets();
        let nw = self.w.dim();
        while self.prefix.len() <= k {
            let mut next = self.prefix.last().expect("nonempty").clone();
            let mut next_grad = self.prefix_grads.last().cloned();
            for r in 0..nr {
                let dir = self.power.row(r).transpose();
                let s = self.w.support_warm(&dir, self.warm[r].as_ref())?;
                next[r] += s.value;
                if !s.strict_complementarity && dir.amax() > 0.0 {
                    self.weak += 1;
                } else if !s.unique && dir.amax() > 0.0 {
                    self.face += 1;
                }
                if let Some(g) = next_grad.as_mut() {
                    for f in 0..nf {
                        let mu = s.multipliers[f];
                        if mu == 0.0 {
                            continue;
                        }
                        for l in 0..nw {
                            g[(r, f * nw + l)] -= mu * s.point[l];
                        }
                        g[(r, nf * nw + f)] += mu;
                    }
                }
                self.warm[r] = Some(WarmStart::from_active_set(s.active_set));
            }
            self.prefix.push(next);
            if let Some(g) = next_grad {
                self.prefix_grads.push(g);
            }
            self.power = &self.power * &self.a_k;
        }
        Ok(())
    }

    /// `Σ_{j<k} s_{·,j}`.
    pub(crate) fn prefix(&self, k: usize) -> DVector<f64> {
        self.prefix[k].clone()
    }

    fn prefix_grad(&self, k: usize) -> &DMatrix<f64> {
        debug_assert!(self.with_grads);
        &self.prefix_grads[k]
    }
}

fn w_param_count(w: &FacetPolytope) -> usize {
    w.n_facets() * (w.dim() + 1)
}

/// Model, constraints, gain and disturbance set the profile depends on.
#[derive(Clone, Copy, Debug)]
pub struct ProfileInput<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub c: &'a DMatrix<f64>,
    pub d: &'a DMatrix<f64>,
    pub c_bar: &'a DVector<f64>,
    pub k: &'a DMatrix<f64>,
    pub w: &'a FacetPolytope,
    pub horizon: usize,
}

impl ProfileInput<'_> {
    fn validate(&self) -> Result<(), TighteningError> {
        let ns = self.a.nrows();
        let na = self.b.ncols();
        let nc = self.c.nrows();
        let ok = self.a.ncols() == ns
            && self.b.nrows() == ns
            && self.c.ncols() == ns
            && self.d.shape() == (nc, na)
            && self.c_bar.len() == nc
            && self.k.shape() == (na, ns)
            && self.w.dim() == ns;
        if ok {
            Ok(())
        } else {
            Err(TighteningError::DimensionMismatch("profile input".into()))
        }
    }
}

/// Which parameters to differentiate. Columns of the sensitivity tables are
/// ordered: `M` (row-major), `m`, then `K`, `C`, `D` (each row-major) for the
/// selected groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SensitivitySelection {
    pub w: bool,
    pub k: bool,
    pub c: bool,
    pub d: bool,
}

impl SensitivitySelection {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn any(&self) -> bool {
        self.w || self.k || self.c || self.d
    }

    pub fn n_cols(&self, input: &ProfileInput<'_>) -> usize {
        let mut n = 0;
        if self.w {
            n += w_param_count(input.w);
        }
        if self.k {
            n += input.k.len();
        }
        if self.c {
            n += input.c.len();
        }
        if self.d {
            n += input.d.len();
        }
        n
    }
}

/// The parts of a profile held fixed when differentiating by finite
/// differences: the determination index and the kept terminal rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileStructure {
    pub k_prime: usize,
    /// `(constraint row, level)` of each kept terminal row.
    pub terminal_rows: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct TighteningProfile {
    /// `d_0..d_N`.
    pub d: Vec<DVector<f64>>,
    /// `c_k = c̄ + d_k`.
    pub c: Vec<DVector<f64>>,
    /// Terminal rows after redundancy removal.
    pub g_mat: DMatrix<f64>,
    pub g_bar: DVector<f64>,
    pub h: DVector<f64>,
    /// `g = ḡ + h`; the terminal constraint is `G x + g <= 0`.
    pub g: DVector<f64>,
    pub k_prime: usize,
    pub terminal_rows: Vec<(usize, usize)>,
    /// Support LPs solved without strict complementarity; their multipliers
    /// give a one-sided derivative.
    pub weak_summands: usize,
    /// Support LPs whose maximizer is a whole face (direction parallel to a
    /// facet normal); derivatives in those normals are one-sided.
    pub face_summands: usize,
    pub selection: SensitivitySelection,
    /// `∂d_k/∂θ` for each k (rows = constraint rows).
    pub sens_d: Vec<DMatrix<f64>>,
    /// `∂g/∂θ` (rows = kept terminal rows).
    pub sens_g: DMatrix<f64>,
    /// `∂G/∂θ`, one matrix per column; empty for parameters `G` does not
    /// depend on.
    pub sens_g_mat: Vec<Option<DMatrix<f64>>>,
}

impl TighteningProfile {
    pub fn structure(&self) -> ProfileStructure {
        ProfileStructure { k_prime: self.k_prime, terminal_rows: self.terminal_rows.clone() }
    }

    pub fn horizon(&self) -> usize {
        self.d.len() - 1
    }
}

/// Runs the whole pipeline: stage tightenings, finite determination,
/// terminal tightening over the horizon, redundancy removal and the selected
/// sensitivities.
pub fn build_profile(input: &ProfileInput<'_>, selection: &SensitivitySelection) -> Result<TighteningProfile, TighteningError> {
    let mut profile = compute(input, None, selection.w)?;
    profile.selection = *selection;
    let ncol = selection.n_cols(input);
    let nc = input.c.nrows();
    let ng = profile.g.len();
    let mut sens_d = vec![DMatrix::zeros(nc, ncol); profile.d.len()];
    let mut sens_g = DMatrix::zeros(ng, ncol);
    let mut sens_g_mat = vec![None; ncol];
    let mut col = 0;
    if selection.w {
        let np = w_param_count(input.w);
        for (k, s) in sens_d.iter_mut().enumerate() {
            s.columns_mut(0, np).copy_from(&profile.sens_d[k]);
        }
        sens_g.columns_mut(0, np).copy_from(&profile.sens_g);
        col = np;
    }
    let structure = profile.structure();
    let groups: [(bool, &DMatrix<f64>, Group); 3] =
        [(selection.k, input.k, Group::K), (selection.c, input.c, Group::C), (selection.d, input.d, Group::D)];
    for (on, mat, group) in groups {
        if !on {
            continue;
        }
        // Row-major traversal to match the column convention.
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let plus = perturbed(input, group, i, j, FD_STEP, &structure)?;
                let minus = perturbed(input, group, i, j, -FD_STEP, &structure)?;
                for (k, sk) in sens_d.iter_mut().enumerate() {
                    sk.set_column(col, &((&plus.d[k] - &minus.d[k]) / (2.0 * FD_STEP)));
                }
                let fd = (&plus.g - &minus.g) / (2.0 * FD_STEP);
                sens_g.set_column(col, &fd);
                sens_g_mat[col] = Some((&plus.g_mat - &minus.g_mat) / (2.0 * FD_STEP));
                col += 1;
            }
        }
    }
    profile.sens_d = sens_d;
    profile.sens_g = sens_g;
    profile.sens_g_mat = sens_g_mat;
    Ok(profile)
}

#[derive(Clone, Copy)]
enum Group {
    K,
    C,
    D,
}

fn perturbed(
    input: &ProfileInput<'_>,
    group: Group,
    i: usize,
    j: usize,
    step: f64,
    structure: &ProfileStructure,
) -> Result<TighteningProfile, TighteningError> {
    let mut k = input.k.clone();
    let mut c = input.c.clone();
    let mut d = input.d.clone();
    match group {
        Group::K => k[(i, j)] += step,
        Group::C => c[(i, j)] += step,
        Group::D => d[(i, j)] += step,
    }
    let p = ProfileInput { k: &k, c: &c, d: &d, ..*input };
    compute(&p, Some(structure), false)
}

fn compute(
    input: &ProfileInput<'_>,
    structure: Option<&ProfileStructure>,
    with_grads: bool,
) -> Result<TighteningProfile, TighteningError> {
    input.validate()?;
    let n_horizon = input.horizon;
    let nc = input.c.nrows();
    let (a_k, c_k) = closed_loop(input.a, input.b, input.c, input.d, input.k);
    check_stable(&a_k)?;
    let mut table = SummandTable::new(a_k, c_k.clone(), input.w, with_grads);

    let (k_prime, terminal_rows) = match structure {
        Some(s) => (s.k_prime, s.terminal_rows.clone()),
        None => {
            let ts = terminal_set(input.a, input.b, input.c, input.d, input.k, |l| {
                table.ensure(l)?;
                Ok(input.c_bar + table.prefix(l))
            })?;
            let kp = ts.k_prime;
            table.ensure(kp - 1 + n_horizon)?;
            let g_full = DVector::from_fn(ts.g.nrows(), |i, _| {
                let (r, l) = (i % nc, i / nc);
                input.c_bar[r] + table.prefix(l + n_horizon)[r]
            });
            check_nonempty(&ts.g, &g_full)?;
            let (_, _, kept) = remove_redundant(&ts.g, &g_full)?;
            (kp, kept.into_iter().map(|i| (i % nc, i / nc)).collect())
        }
    };
    let max_level = terminal_rows.iter().map(|&(_, l)| l).max().unwrap_or(0);
    table.ensure((max_level + n_horizon).max(n_horizon))?;

    let d: Vec<DVector<f64>> = (0..=n_horizon).map(|k| table.prefix(k)).collect();
    let c: Vec<DVector<f64>> = d.iter().map(|dk| input.c_bar + dk).collect();
    let ns = input.a.nrows();
    let ng = terminal_rows.len();
    let mut g_mat = DMatrix::zeros(ng, ns);
    let mut g_bar = DVector::zeros(ng);
    let mut h = DVector::zeros(ng);
    // Rows C_K A_K^l are rebuilt from powers; levels are small.
    let mut powers = vec![c_k];
    for &(_, l) in &terminal_rows {
        while powers.len() <= l {
            let next = powers.last().expect("nonempty") * &(input.a - input.b * input.k);
            powers.push(next);
        }
    }
    for (i, &(r, l)) in terminal_rows.iter().enumerate() {
        g_mat.set_row(i, &powers[l].row(r));
        g_bar[i] = input.c_bar[r] + table.prefix(l)[r];
        h[i] = table.prefix(l + n_horizon)[r] - table.prefix(l)[r];
    }
    let g = &g_bar + &h;

    let (sens_d, sens_g) = if with_grads {
        let sd = (0..=n_horizon).map(|k| table.prefix_grad(k).clone()).collect();
        let np = w_param_count(input.w);
        let mut sg = DMatrix::zeros(ng, np);
        for (i, &(r, l)) in terminal_rows.iter().enumerate() {
            sg.set_row(i, &table.prefix_grad(l + n_horizon).row(r));
        }
        (sd, sg)
    } else {
        (Vec::new(), DMatrix::zeros(ng, 0))
    };

    Ok(TighteningProfile {
        d,
        c,
        g_mat,
        g_bar,
        h,
        g,
        k_prime,
        terminal_rows,
        weak_summands: table.weak,
        face_summands: table.face,
        selection: SensitivitySelection { w: with_grads, ..Default::default() },
        sens_d,
        sens_g,
        sens_g_mat: Vec::new(),
    })
}

fn check_nonempty(g: &DMatrix<f64>, gv: &DVector<f64>) -> Result<(), TighteningError> {
    let qp = QpProblem::linear_program(DVector::zeros(g.ncols())).with_inequalities(g.clone(), -gv);
    match solver::solve(&qp, None) {
        Ok(_) => Ok(()),
        Err(SolverError::Infeasible) => Err(TighteningError::EmptyTerminalSet),
        Err(e) => Err(PolytopeError::from(e).into()),
    }
}
