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

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::polytope::FacetPolytope;
use crate::tightening::{self, ProfileInput, SensitivitySelection, TighteningError, TighteningProfile};

/// All MPC data, learnable or not.
///
/// The stage and terminal weights are stored as lower-triangular Cholesky
/// factors so that positive definiteness only requires positive diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcParams {
    /// `H = L Lᵀ` over `z = (x, u)`.
    pub h_chol: DMatrix<f64>,
    pub h_lin: DVector<f64>,
    /// `P = L Lᵀ`.
    pub p_chol: DMatrix<f64>,
    pub p_lin: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_aff: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub c_bar: DVector<f64>,
    pub k: DMatrix<f64>,
    pub w: FacetPolytope,
    pub gamma: f64,
    /// Uniform exact-penalty weight; `None` uses `1e3 · λ_max(H)`.
    pub rho: Option<f64>,
    pub horizon: usize,
}

impl MpcParams {
    pub fn n_s(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_a(&self) -> usize {
        self.b.ncols()
    }

    pub fn stage_weight(&self) -> DMatrix<f64> {
        &self.h_chol * self.h_chol.transpose()
    }

    pub fn terminal_weight(&self) -> DMatrix<f64> {
        &self.p_chol * self.p_chol.transpose()
    }

    pub fn default_rho(&self) -> f64 {
        1e3 * self.stage_weight().symmetric_eigen().eigenvalues.max()
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or_else(|| self.default_rho())
    }

    /// Whether constraint row `r` involves the state.
    pub fn is_state_row(&self, r: usize) -> bool {
        self.c.row(r).iter().any(|&v| v != 0.0)
    }

    /// Whether row `r` repeats an earlier row of `(C, D, c̄)` exactly. Such
    /// rows are left out of the QP so the active gradients stay independent.
    pub fn is_duplicate_row(&self, r: usize) -> bool {
        (0..r).any(|q| self.c.row(q) == self.c.row(r) && self.d.row(q) == self.d.row(r) && self.c_bar[q] == self.c_bar[r])
    }

    pub fn profile_input(&self) -> ProfileInput<'_> {
        ProfileInput {
            a: &self.a,
            b: &self.b,
            c: &self.c,
            d: &self.d,
            c_bar: &self.c_bar,
            k: &self.k,
            w: &self.w,
            horizon: self.horizon,
        }
    }

    /// Tightening profile with the sensitivities `sel` needs.
    pub fn build_profile(&self, sel: &ThetaSelection) -> Result<TighteningProfile, TighteningError> {
        tightening::build_profile(&self.profile_input(), &sel.tightening())
    }

    pub fn validate(&self) -> Result<(), String> {
        let ns = self.n_s();
        let na = self.n_a();
        let nc = self.c.nrows();
        let checks = [
            (self.h_chol.shape() == (ns + na, ns + na), "h_chol"),
            (self.h_lin.len() == ns + na, "h_lin"),
            (self.p_chol.shape() == (ns, ns), "p_chol"),
            (self.p_lin.len() == ns, "p_lin"),
            (self.a.shape() == (ns, ns), "a"),
            (self.b.nrows() == ns, "b"),
            (self.b_aff.len() == ns, "b_aff"),
            (self.c.ncols() == ns, "c"),
            (self.d.shape() == (nc, na), "d"),
            (self.c_bar.len() == nc, "c_bar"),
            (self.k.shape() == (na, ns), "k"),
            (self.w.dim() == ns, "w"),
            ((0.0..=1.0).contains(&self.gamma), "gamma"),
            (self.horizon >= 1, "horizon"),
            (self.rho.is_none_or(|r| r > 0.0 && r.is_finite()), "rho"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(format!("invalid {name}")),
            None => Ok(()),
        }
    }
}

/// Parameter groups in θ, in layout order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    StageChol,
    StageLin,
    TerminalChol,
    TerminalLin,
    C,
    D,
    CBar,
    K,
    WNormals,
    WOffsets,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::StageChol,
        ParamGroup::StageLin,
        ParamGroup::TerminalChol,
        ParamGroup::TerminalLin,
        ParamGroup::C,
        ParamGroup::D,
        ParamGroup::CBar,
        ParamGroup::K,
        ParamGroup::WNormals,
        ParamGroup::WOffsets,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::StageChol => "H",
            ParamGroup::StageLin => "h",
            ParamGroup::TerminalChol => "P",
            ParamGroup::TerminalLin => "p",
            ParamGroup::C => "C",
            ParamGroup::D => "D",
            ParamGroup::CBar => "c_bar",
            ParamGroup::K => "K",
            ParamGroup::WNormals => "M",
            ParamGroup::WOffsets => "m",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|g| g.name() == s)
    }

    fn len(&self, p: &MpcParams) -> usize {
        let tri = |n: usize| n * (n + 1) / 2;
        match self {
            ParamGroup::StageChol => tri(p.h_chol.nrows()),
            ParamGroup::StageLin => p.h_lin.len(),
            ParamGroup::TerminalChol => tri(p.p_chol.nrows()),
            ParamGroup::TerminalLin => p.p_lin.len(),
            ParamGroup::C => p.c.len(),
            ParamGroup::D => p.d.len(),
            ParamGroup::CBar => p.c_bar.len(),
            ParamGroup::K => p.k.len(),
            ParamGroup::WNormals => p.w.normals.len(),
            ParamGroup::WOffsets => p.w.offsets.len(),
        }
    }
}

/// Learnable subset of θ. Model matrices are never learnable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaSelection {
    pub groups: Vec<ParamGroup>,
}

impl Default for ThetaSelection {
    fn default() -> Self {
        Self { groups: vec![ParamGroup::WNormals, ParamGroup::WOffsets] }
    }
}

fn lower_entries(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(|i| (0..=i).map(move |j| (i, j)))
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| (i, j)))
}

impl ThetaSelection {
    pub fn new(mut groups: Vec<ParamGroup>) -> Self {
        groups.sort_by_key(|g| ParamGroup::ALL.iter().position(|x| x == g));
        groups.dedup();
        Self { groups }
    }

    pub fn with_gain() -> Self {
        Self::new(vec![ParamGroup::WNormals, ParamGroup::WOffsets, ParamGroup::K])
    }

    pub fn contains(&self, g: ParamGroup) -> bool {
        self.groups.contains(&g)
    }

    /// Index ranges of each selected group inside θ.
    pub fn ranges(&self, p: &MpcParams) -> Vec<(ParamGroup, Range<usize>)> {
        let mut at = 0;
        self.groups
            .iter()
            .map(|&g| {
                let n = g.len(p);
                let r = at..at + n;
                at += n;
                (g, r)
            })
            .collect()
    }

    pub fn range(&self, p: &MpcParams, g: ParamGroup) -> Option<Range<usize>> {
        self.ranges(p).into_iter().find(|(x, _)| *x == g).map(|(_, r)| r)
    }

    pub fn len(&self, p: &MpcParams) -> usize {
        self.groups.iter().map(|g| g.len(p)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Sensitivities the tightening profile must provide.
    pub fn tightening(&self) -> SensitivitySelection {
        SensitivitySelection {
            w: self.contains(ParamGroup::WNormals) || self.contains(ParamGroup::WOffsets),
            k: self.contains(ParamGroup::K),
            c: self.contains(ParamGroup::C),
            d: self.contains(ParamGroup::D),
        }
    }

    /// Maps each tightening-table column to its θ index (if selected).
    pub fn tightening_columns(&self, p: &MpcParams) -> Vec<Option<usize>> {
        let ts = self.tightening();
        let mut out = Vec::new();
        let nf = p.w.n_facets();
        let nw = p.w.dim();
        if ts.w {
            let m_range = self.range(p, ParamGroup::WNormals);
            for i in 0..nf * nw {
                out.push(m_range.as_ref().map(|r| r.start + i));
            }
            let o_range = self.range(p, ParamGroup::WOffsets);
            for i in 0..nf {
                out.push(o_range.as_ref().map(|r| r.start + i));
            }
        }
        for (on, g) in [(ts.k, ParamGroup::K), (ts.c, ParamGroup::C), (ts.d, ParamGroup::D)] {
            if on {
                let r = self.range(p, g).expect("selected");
                out.extend(r.map(Some));
            }
        }
        out
    }

    /// Extracts the selected entries.
    pub fn theta(&self, p: &MpcParams) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len(p));
        for g in &self.groups {
            match g {
                ParamGroup::StageChol => out.extend(lower_entries(p.h_chol.nrows()).map(|(i, j)| p.h_chol[(i, j)])),
                ParamGroup::StageLin => out.extend(p.h_lin.iter()),
                ParamGroup::TerminalChol => out.extend(lower_entries(p.p_chol.nrows()).map(|(i, j)| p.p_chol[(i, j)])),
                ParamGroup::TerminalLin => out.extend(p.p_lin.iter()),
                ParamGroup::C => out.extend(row_major(&p.c).map(|ij| p.c[ij])),
                ParamGroup::D => out.extend(row_major(&p.d).map(|ij| p.d[ij])),
                ParamGroup::CBar => out.extend(p.c_bar.iter()),
                ParamGroup::K => out.extend(row_major(&p.k).map(|ij| p.k[ij])),
                ParamGroup::WNormals => out.extend(row_major(&p.w.normals).map(|ij| p.w.normals[ij])),
                ParamGroup::WOffsets => out.extend(p.w.offsets.iter()),
            }
        }
        DVector::from_vec(out)
    }

    /// Returns a copy of `p` with the selected entries replaced by `theta`.
    pub fn apply(&self, p: &MpcParams, theta: &DVector<f64>) -> MpcParams {
        let mut q = p.clone();
        let mut it = theta.iter().copied();
        let mut next = || it.next().expect("theta length matches selection");
        for g in &self.groups {
            match g {
                ParamGroup::StageChol => {
                    for (i, j) in lower_entries(q.h_chol.nrows()) {
                        q.h_chol[(i, j)] = next();
                    }
                }
                ParamGroup::StageLin => q.h_lin.iter_mut().for_each(|v| *v = next()),
                ParamGroup::TerminalChol => {
                    for (i, j) in lower_entries(q.p_chol.nrows()) {
                        q.p_chol[(i, j)] = next();
                    }
                }
                ParamGroup::TerminalLin => q.p_lin.iter_mut().for_each(|v| *v = next()),
                ParamGroup::C => {
                    for ij in row_major(&p.c) {
                        q.c[ij] = next();
                    }
                }
                ParamGroup::D => {
                    for ij in row_major(&p.d) {
                        q.d[ij] = next();
                    }
                }
                ParamGroup::CBar => q.c_bar.iter_mut().for_each(|v| *v = next()),
                ParamGroup::K => {
                    for ij in row_major(&p.k) {
                        q.k[ij] = next();
                    }
                }
                ParamGroup::WNormals => {
                    for ij in row_major(&p.w.normals) {
                        q.w.normals[ij] = next();
                    }
                }
                ParamGroup::WOffsets => q.w.offsets.iter_mut().for_each(|v| *v = next()),
            }
        }
        q
    }

    /// θ indices of the Cholesky diagonal entries, which carry the
    /// positivity floor.
    pub fn chol_diagonal_indices(&self, p: &MpcParams) -> Vec<usize> {
        let mut out = Vec::new();
        for (g, r) in self.ranges(p) {
            let n = match g {
                ParamGroup::StageChol => p.h_chol.nrows(),
                ParamGroup::TerminalChol => p.p_chol.nrows(),
                _ => continue,
            };
            for (pos, (i, j)) in lower_entries(n).enumerate() {
                if i == j {
                    out.push(r.start + pos);
                }
            }
        }
        out
    }
}

pub(crate) fn lower_triangle(n: usize) -> Vec<(usize, usize)> {
    lower_entries(n).collect()
}
