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

//! Facet and vertex representations of convex polytopes.
//!
//! Facet form `{w | M w <= m}` carries the learnable uncertainty set. Vertex
//! form stores the sample hull; every query on it goes through an LP rather
//! than a facet enumeration.

mod planar;
mod text;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::solver::{self, QpProblem, SolverError, WarmStart};

pub use planar::{planar_vertices, polygon_area};

/// Absolute tolerance on ζ when deciding hull membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("polytope is unbounded in the requested direction")]
    Unbounded,
    #[error("polytope is empty or the hull does not span the space")]
    Infeasible,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Solver(SolverError),
}

impl From<SolverError> for PolytopeError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Unbounded => Self::Unbounded,
            SolverError::Infeasible => Self::Infeasible,
            other => Self::Solver(other),
        }
    }
}

/// `{w | normals · w <= offsets}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FacetPolytope {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

/// Optimal value of a support LP with its maximizer and facet multipliers.
#[derive(Clone, Debug)]
pub struct Support {
    pub value: f64,
    pub point: DVector<f64>,
    /// `∂value/∂offsets`; `∂value/∂normals[i, j] = -multipliers[i] * point[j]`.
    pub multipliers: DVector<f64>,
    pub active_set: Vec<usize>,
    pub strict_complementarity: bool,
    /// The maximizer is a nondegenerate vertex. On a face the normal
    /// derivatives above are one-sided.
    pub unique: bool,
}

impl FacetPolytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, PolytopeError> {
        if normals.nrows() != offsets.len() {
            return Err(PolytopeError::DimensionMismatch(format!("{} normals vs {} offsets", normals.nrows(), offsets.len())));
        }
        Ok(Self { normals, offsets })
    }

    /// Axis-aligned box `lo <= w <= hi`, upper facets first.
    pub fn axis_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Self {
        let n = lo.len();
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(i, i)] = 1.0;
            offsets[i] = hi[i];
            normals[(n + i, i)] = -1.0;
            offsets[n + i] = -lo[i];
        }
        Self { normals, offsets }
    }

    pub fn unit_box(n: usize) -> Self {
        Self::axis_box(&DVector::from_element(n, -1.0), &DVector::from_element(n, 1.0))
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn n_facets(&self) -> usize {
        self.normals.nrows()
    }

    pub fn support(&self, dir: &DVector<f64>) -> Result<Support, PolytopeError> {
        self.support_warm(dir, None)
    }

    /// Support LP, optionally warm-started from a previous active set.
    pub fn support_warm(&self, dir: &DVector<f64>, warm: Option<&WarmStart>) -> Result<Support, PolytopeError> {
        if dir.len() != self.dim() {
            return Err(PolytopeError::DimensionMismatch(format!("direction of length {}", dir.len())));
        }
        if self.dim() == 2 {
            if let Some(s) = self.support_planar(dir) {
                return Ok(s);
            }
        }
        let qp = QpProblem::linear_program(-dir).with_inequalities(self.normals.clone(), self.offsets.clone());
        let res = solver::solve(&qp, warm)?;
        Ok(Support {
            value: -res.objective,
            point: res.y_star,
            multipliers: res.mu_in,
            unique: res.strict_complementarity && res.licq && res.active_set.len() == self.dim(),
            active_set: res.active_set,
            strict_complementarity: res.strict_complementarity,
        })
    }

    /// Planar support by facet pairs: the optimum is a vertex whose two facet
    /// normals have `dir` in their nonnegative cone. `None` unless that
    /// vertex is unique and nondegenerate.
    fn support_planar(&self, dir: &DVector<f64>) -> Option<Support> {
        let (d0, d1) = (dir[0], dir[1]);
        if d0 == 0.0 && d1 == 0.0 {
            return None;
        }
        let m = &self.normals;
        let n_f = m.nrows();
        let scale = d0.abs().max(d1.abs());
        for i in 0..n_f {
            for j in i + 1..n_f {
                let (a, b, c, d) = (m[(i, 0)], m[(i, 1)], m[(j, 0)], m[(j, 1)]);
                let det = a * d - b * c;
                if det.abs() <= 1e-12 * (a.abs() + b.abs()) * (c.abs() + d.abs()) {
                    continue;
                }
                // [a c; b d] λ = dir.
                let li = (d * d0 - c * d1) / det;
                let lj = (a * d1 - b * d0) / det;
                if li < -1e-12 * scale || lj < -1e-12 * scale {
                    continue;
                }
                let (oi, oj) = (self.offsets[i], self.offsets[j]);
                let w = DVector::from_column_slice(&[(d * oi - b * oj) / det, (a * oj - c * oi) / det]);
                let mw = m * &w;
                let tol = |k: usize| 1e-9 * (1.0 + self.offsets[k].abs());
                if (0..n_f).any(|k| mw[k] - self.offsets[k] > tol(k)) {
                    continue;
                }
                // Degenerate vertices and faces go through the LP so that
                // their reporting matches the general solver.
                let sc_tol = solver::SolverOptions::default().strict_complementarity_tol;
                let weak = (0..n_f).any(|k| k != i && k != j && (mw[k] - self.offsets[k]).abs() <= tol(k));
                if weak || li < sc_tol || lj < sc_tol {
                    return None;
                }
                let mut multipliers = DVector::zeros(n_f);
                multipliers[i] = li;
                multipliers[j] = lj;
                return Some(Support {
                    value: d0 * w[0] + d1 * w[1],
                    point: w,
                    multipliers,
                    active_set: vec![i, j],
                    strict_complementarity: true,
                    unique: true,
                });
            }
        }
        None
    }

    /// Finite support in every ± coordinate direction.
    pub fn is_bounded(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| {
            [1.0, -1.0].iter().all(|&s| {
                let mut d = DVector::zeros(n);
                d[i] = s;
                self.support(&d).is_ok()
            })
        })
    }

    pub fn contains_origin(&self) -> bool {
        self.offsets.iter().all(|&v| v >= 0.0)
    }

    /// `max_i (M_i w - m_i)`; nonpositive iff `w` is contained.
    pub fn facet_violation(&self, w: &DVector<f64>) -> f64 {
        (&self.normals * w - &self.offsets).max()
    }

    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        self.facet_violation(w) <= tol
    }

    /// Raises each offset to `max(m_i, M_i w)` so that `w` is contained.
    pub fn sdc_adapt(&self, w: &DVector<f64>) -> Self {
        let mw = &self.normals * w;
        let offsets = self.offsets.zip_map(&mw, f64::max);
        Self { normals: self.normals.clone(), offsets }
    }
}

/// Result of the hull-membership LP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub inside: bool,
    /// `min Σ z_i` over nonnegative combinations reproducing the point;
    /// infinite when the point lies outside the generated cone.
    pub zeta: f64,
}

/// Convex hull kept as a minimal vertex list.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct VertexPolytope {
    pub vertices: Vec<DVector<f64>>,
    /// Optional cap on the vertex count; `None` means unlimited.
    pub max_vertices: Option<usize>,
}

fn vertex_matrix(vertices: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, vertices.len(), |i, j| vertices[j][i])
}

fn spans(vertices: &[DVector<f64>], dim: usize) -> bool {
    if vertices.len() < dim {
        return false;
    }
    let v = vertex_matrix(vertices, dim);
    let scale = v.amax();
    if scale == 0.0 {
        return dim == 0;
    }
    v.svd(false, false).singular_values.iter().filter(|&&s| s > 1e-10 * scale).count() == dim
}

/// ζ-LP of `point` against the nonnegative cone of `vertices`.
fn zeta(point: &DVector<f64>, vertices: &[DVector<f64>]) -> Result<f64, PolytopeError> {
    let k = vertices.len();
    let qp = QpProblem::linear_program(DVector::from_element(k, 1.0))
        .with_equalities(vertex_matrix(vertices, point.len()), point.clone())
        .with_inequalities(-DMatrix::identity(k, k), DVector::zeros(k));
    match solver::solve(&qp, None) {
        Ok(r) => Ok(r.objective),
        Err(SolverError::Infeasible) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

/// Whether `point` is a convex combination of `vertices` (no origin
/// assumption).
fn in_convex_hull(point: &DVector<f64>, vertices: &[DVector<f64>]) -> Result<bool, PolytopeError> {
    let k = vertices.len();
    if k == 0 {
        return Ok(false);
    }
    let dim = point.len();
    let mut a_eq = DMatrix::from_element(dim + 1, k, 1.0);
    a_eq.view_mut((0, 0), (dim, k)).copy_from(&vertex_matrix(vertices, dim));
    let mut b_eq = DVector::from_element(dim + 1, 1.0);
    b_eq.rows_mut(0, dim).copy_from(point);
    let qp = QpProblem::linear_program(DVector::zeros(k))
        .with_equalities(a_eq, b_eq)
        .with_inequalities(-DMatrix::identity(k, k), DVector::zeros(k));
    match solver::solve(&qp, None) {
        Ok(_) => Ok(true),
        Err(SolverError::Infeasible) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// ζ-based membership test. Requires a hull that spans the space and
/// contains the origin.
pub fn hull_membership(point: &DVector<f64>, hull: &VertexPolytope) -> Result<Membership, PolytopeError> {
    if !hull.spans(point.len()) {
        return Err(PolytopeError::Infeasible);
    }
    let z = zeta(point, &hull.vertices)?;
    Ok(Membership { inside: z <= 1.0 + MEMBERSHIP_TOL, zeta: z })
}

impl VertexPolytope {
    pub fn new(vertices: Vec<DVector<f64>>) -> Self {
        Self { vertices, max_vertices: None }
    }

    pub fn with_max_vertices(mut self, cap: Option<usize>) -> Self {
        self.max_vertices = cap;
        self
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn spans(&self, dim: usize) -> bool {
        spans(&self.vertices, dim)
    }

    /// Whether `w` is a convex combination of the vertices.
    pub fn contains_point(&self, w: &DVector<f64>) -> Result<bool, PolytopeError> {
        in_convex_hull(w, &self.vertices)
    }

    pub fn contains_origin(&self, dim: usize) -> Result<bool, PolytopeError> {
        in_convex_hull(&DVector::zeros(dim), &self.vertices)
    }

    /// Inserts `w` and prunes vertices that became interior. Returns whether
    /// the hull changed.
    pub fn insert(&mut self, w: &DVector<f64>) -> Result<bool, PolytopeError> {
        let dim = w.len();
        let use_zeta = self.spans(dim) && self.contains_origin(dim)?;
        let inside = if use_zeta { hull_membership(w, self)?.inside } else { in_convex_hull(w, &self.vertices)? };
        if inside {
            return Ok(false);
        }
        self.vertices.push(w.clone());
        let mut i = 0;
        while i + 1 < self.vertices.len() {
            let v = self.vertices[i].clone();
            let others: Vec<DVector<f64>> =
                self.vertices.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x.clone()).collect();
            if in_convex_hull(&v, &others)? {
                self.vertices.remove(i);
            } else {
                i += 1;
            }
        }
        if let Some(cap) = self.max_vertices {
            while self.vertices.len() > cap.max(1) {
                let drop = self.least_exposed()?;
                self.vertices.remove(drop);
            }
        }
        Ok(true)
    }

    /// Vertex whose ζ against the remaining vertices is smallest, i.e. the one
    /// sticking out least.
    fn least_exposed(&self) -> Result<usize, PolytopeError> {
        let mut best = (0, f64::INFINITY, f64::INFINITY);
        for i in 0..self.vertices.len() {
            let others: Vec<DVector<f64>> =
                self.vertices.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x.clone()).collect();
            let z = zeta(&self.vertices[i], &others)?;
            let norm = self.vertices[i].norm();
            if z < best.1 || (z == best.1 && norm < best.2) {
                best = (i, z, norm);
            }
        }
        Ok(best.0)
    }

    /// Whether every vertex satisfies the facet inequalities of `p`.
    pub fn satisfies(&self, p: &FacetPolytope, tol: f64) -> bool {
        self.vertices.iter().all(|v| p.contains(v, tol))
    }
}

/// Inserts `w`, returning the updated hull.
pub fn hull_insert(hull: &VertexPolytope, w: &DVector<f64>) -> Result<VertexPolytope, PolytopeError> {
    let mut out = hull.clone();
    out.insert(w)?;
    Ok(out)
}
