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

//! Null-space factorization of the KKT system for a fixed working set.
//!
//! Working rows that touch a single variable ("singleton" rows, i.e. bounds
//! or fixing equalities) are eliminated by fixing that variable. The remaining
//! general rows are restricted to the free variables and factorized through a
//! Householder QR of their transpose, which yields both a range basis for the
//! multipliers and an orthonormal null-space basis `Z` for the step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::SolverError;

/// Identifies a constraint row of a [`super::QpProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowId {
    Eq(usize),
    In(usize),
}

/// A single-variable row `coeff * y[col]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Singleton {
    pub col: usize,
    pub coeff: f64,
}

/// A working-set row together with its coefficients.
#[derive(Clone, Debug)]
pub(crate) struct WorkingRow {
    pub id: RowId,
    pub coeffs: DVector<f64>,
    pub singleton: Option<Singleton>,
}

#[derive(Clone, Debug)]
enum Reduced {
    /// Null space is trivial.
    Empty,
    /// Not computed; only [`KktFactorization::particular`] is available.
    Skipped,
    Cholesky(DMatrix<f64>),
    Eigen {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
        cutoff: f64,
    },
}

/// Outcome of a null-space step computation.
#[derive(Clone, Debug)]
pub(crate) enum Step {
    /// Step to the minimizer on the current working-set manifold.
    Newton(DVector<f64>),
    /// Descent direction of zero curvature; the objective decreases without
    /// bound along it unless a constraint blocks.
    Ray(DVector<f64>),
}

/// Reusable factorization of the KKT matrix at a fixed active set.
///
/// Holds everything needed to solve
/// `[H Aᵀ; A 0] [dy; dλ] = [r1; r2]` for new right-hand sides without
/// refactorizing, where `A` stacks the working rows in [`Self::rows`] order.
#[derive(Clone, Debug)]
pub struct KktFactorization {
    n: usize,
    rows: Vec<WorkingRow>,
    /// Working-row position fixing each variable, if any.
    fixed_by: Vec<Option<usize>>,
    free: Vec<usize>,
    /// Working-row positions of the general (non-singleton) rows.
    general: Vec<usize>,
    q: DMatrix<f64>,
    r1: DMatrix<f64>,
    z: DMatrix<f64>,
    hessian: DMatrix<f64>,
    reduced: Reduced,
}

impl KktFactorization {
    pub(crate) fn new(hessian: &DMatrix<f64>, rows: Vec<WorkingRow>) -> Result<Self, SolverError> {
        Self::build(hessian, rows, true)
    }

    /// Factorization of the rows alone, enough to compute particular points.
    pub(crate) fn rows_only(hessian: &DMatrix<f64>, rows: Vec<WorkingRow>) -> Result<Self, SolverError> {
        Self::build(hessian, rows, false)
    }

    fn build(hessian: &DMatrix<f64>, rows: Vec<WorkingRow>, reduced_hessian: bool) -> Result<Self, SolverError> {
        let n = hessian.nrows();
        let mut fixed_by = vec![None; n];
        let mut general = Vec::new();
        for (pos, row) in rows.iter().enumerate() {
            match row.singleton {
                Some(s) if fixed_by[s.col].is_none() => fixed_by[s.col] = Some(pos),
                Some(_) => return Err(SolverError::SingularKkt),
                None => general.push(pos),
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| fixed_by[j].is_none()).collect();
        let nf = free.len();
        let mg = general.len();
        if mg > nf {
            return Err(SolverError::SingularKkt);
        }

        let (q, r1) = if mg == 0 {
            (DMatrix::identity(nf, nf), DMatrix::zeros(0, 0))
        } else {
            let mut at = DMatrix::zeros(nf, mg);
            for (c, &pos) in general.iter().enumerate() {
                for (i, &j) in free.iter().enumerate() {
                    at[(i, c)] = rows[pos].coeffs[j];
                }
            }
            let (q, r1) = householder_full(at);
            let scale = (0..mg).map(|c| rows[general[c]].coeffs.amax()).fold(0.0, f64::max);
            for i in 0..mg {
                if r1[(i, i)].abs() <= 1e-9 * scale.max(1.0) {
                    return Err(SolverError::SingularKkt);
                }
            }
            (q, r1)
        };
        let z = q.columns(mg, nf - mg).into_owned();

        let reduced = if z.ncols() == 0 {
            Reduced::Empty
        } else if !reduced_hessian {
            Reduced::Skipped
        } else if hessian.iter().all(|&v| v == 0.0) {
            let k = z.ncols();
            Reduced::Eigen { vectors: DMatrix::identity(k, k), values: DVector::zeros(k), cutoff: 1e-10 }
        } else {
            let h_ff = submatrix(hessian, &free, &free);
            let hr = z.transpose() * &h_ff * &z;
            let hr = (&hr + hr.transpose()) * 0.5;
            let scale = hr.diagonal().amax().max(1.0);
            let chol = hr.clone().cholesky().filter(|c| {
                let l = c.l_dirty();
                (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > 1e-12 * scale)
            });
            match chol {
                Some(c) => Reduced::Cholesky(c.l()),
                None => {
                    let eig = SymmetricEigen::new(hr);
                    Reduced::Eigen { vectors: eig.eigenvectors, values: eig.eigenvalues, cutoff: 1e-10 * scale }
                }
            }
        };

        Ok(Self { n, rows, fixed_by, free, general, q, r1, z, hessian: hessian.clone(), reduced })
    }

    /// Identifiers of the working rows, in the order used by multipliers and
    /// by the constraint block of sensitivity right-hand sides.
    pub fn row_ids(&self) -> Vec<RowId> {
        self.rows.iter().map(|r| r.id).collect()
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    /// Dimension of the null space of the working rows.
    pub fn null_space_dim(&self) -> usize {
        self.z.ncols()
    }

    /// Whether the reduced Hessian is positive definite, i.e. the KKT matrix
    /// is nonsingular.
    pub fn is_regular(&self) -> bool {
        match &self.reduced {
            Reduced::Empty | Reduced::Cholesky(_) => true,
            Reduced::Eigen { values, cutoff, .. } => values.iter().all(|&v| v > *cutoff),
            Reduced::Skipped => false,
        }
    }

    fn q1(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.q.columns(0, self.general.len())
    }

    fn gather_free(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&j| v[j]))
    }

    fn scatter_free(&self, vf: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (i, &j) in self.free.iter().enumerate() {
            out[j] = vf[i];
        }
        out
    }

    /// Computes the null-space step from a point with gradient `grad`.
    pub(crate) fn step(&self, grad: &DVector<f64>) -> Step {
        let gf = self.gather_free(grad);
        match &self.reduced {
            Reduced::Empty => Step::Newton(DVector::zeros(self.n)),
            Reduced::Skipped => unreachable!("step on a rows-only factorization"),
            Reduced::Cholesky(l) => {
                let gz = self.z.transpose() * gf;
                let dz = chol_solve(l, &gz);
                Step::Newton(self.scatter_free(&(&self.z * (-dz))))
            }
            Reduced::Eigen { vectors, values, cutoff } => {
                let gz = self.z.transpose() * gf;
                let coords = vectors.transpose() * &gz;
                let gscale = 1e-11 * (1.0 + grad.amax());
                let mut flat = DVector::zeros(coords.len());
                let mut curved = DVector::zeros(coords.len());
                for i in 0..coords.len() {
                    if values[i] > *cutoff {
                        curved[i] = -coords[i] / values[i];
                    } else {
                        flat[i] = -coords[i];
                    }
                }
                if flat.amax() > gscale {
                    let d = vectors * flat;
                    Step::Ray(self.scatter_free(&(&self.z * d)))
                } else {
                    let d = vectors * curved;
                    Step::Newton(self.scatter_free(&(&self.z * d)))
                }
            }
        }
    }

    /// Multipliers `λ` (one per working row) solving `grad + Aᵀλ = 0` in the
    /// least-squares sense.
    pub(crate) fn multipliers(&self, grad: &DVector<f64>) -> DVector<f64> {
        let mut lambda = DVector::zeros(self.rows.len());
        let gf = self.gather_free(grad);
        let lg = self.range_multipliers(&(-gf));
        for (c, &pos) in self.general.iter().enumerate() {
            lambda[pos] = lg[c];
        }
        for j in 0..self.n {
            if let Some(pos) = self.fixed_by[j] {
                let s = self.rows[pos].singleton.expect("fixing row is a singleton");
                let mut acc = grad[j];
                for (c, &gpos) in self.general.iter().enumerate() {
                    acc += lg[c] * self.rows[gpos].coeffs[j];
                }
                lambda[pos] = -acc / s.coeff;
            }
        }
        lambda
    }

    /// Solves `Agᵀ λ = rhs_free` through `R1 λ = Q1ᵀ rhs_free`.
    fn range_multipliers(&self, rhs_free: &DVector<f64>) -> DVector<f64> {
        let mg = self.general.len();
        if mg == 0 {
            return DVector::zeros(0);
        }
        let t = self.q1().transpose() * rhs_free;
        back_substitute(&self.r1, &t)
    }

    /// Point satisfying every working row with equality (`A y = rhs`), with
    /// zero null-space component.
    pub(crate) fn particular(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for j in 0..self.n {
            if let Some(pos) = self.fixed_by[j] {
                let s = self.rows[pos].singleton.expect("fixing row is a singleton");
                y[j] = rhs[pos] / s.coeff;
            }
        }
        let yf = self.range_component(&y, rhs);
        for (i, &j) in self.free.iter().enumerate() {
            y[j] = yf[i];
        }
        y
    }

    /// Free-variable vector `Q1 R1⁻ᵀ t` with `t` the general-row residual
    /// after accounting for the fixed variables already in `y`.
    fn range_component(&self, y: &DVector<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        let mg = self.general.len();
        if mg == 0 {
            return DVector::zeros(self.free.len());
        }
        let mut t = DVector::zeros(mg);
        for (c, &pos) in self.general.iter().enumerate() {
            let row = &self.rows[pos].coeffs;
            let mut acc = rhs[pos];
            for j in 0..self.n {
                if self.fixed_by[j].is_some() {
                    acc -= row[j] * y[j];
                }
            }
            t[c] = acc;
        }
        let u = forward_substitute_transposed(&self.r1, &t);
        self.q1() * u
    }

    /// Solves the full KKT system `H dy + Aᵀ dλ = r1`, `A dy = r2`.
    pub fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
        if r1.len() != self.n || r2.len() != self.rows.len() {
            return Err(SolverError::DimensionMismatch(format!(
                "kkt rhs sizes ({}, {}) vs ({}, {})",
                r1.len(),
                r2.len(),
                self.n,
                self.rows.len()
            )));
        }
        if !self.is_regular() {
            return Err(SolverError::SingularKkt);
        }
        let mut dy = self.particular(r2);
        if self.z.ncols() > 0 {
            let h_dy = &self.hessian * &dy;
            let rhs = self.z.transpose() * self.gather_free(&(r1 - h_dy));
            let v = match &self.reduced {
                Reduced::Cholesky(l) => chol_solve(l, &rhs),
                Reduced::Eigen { vectors, values, .. } => {
                    let c = vectors.transpose() * rhs;
                    let c = c.component_div(values);
                    vectors * c
                }
                Reduced::Empty | Reduced::Skipped => unreachable!(),
            };
            let dyf = &self.z * v;
            for (i, &j) in self.free.iter().enumerate() {
                dy[j] += dyf[i];
            }
        }
        let resid = r1 - &self.hessian * &dy;
        // Multipliers satisfy Aᵀ dλ = resid, the same structure as `multipliers`
        // with grad = -resid.
        let dlambda = self.multipliers(&(-resid));
        Ok((dy, dlambda))
    }
}

/// Householder QR `A = Q [R; 0]` of a tall `A`, returning the full square
/// `Q` and the leading `R`. Forming `Q` costs `O(rows² · cols)`.
fn householder_full(mut a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let x = a.view((j, j), (m - j, 1));
        let norm = x.norm();
        let mut v = x.column(0).into_owned();
        if norm == 0.0 {
            reflectors.push(DVector::zeros(m - j));
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = v.norm();
        v /= vn;
        let mut block = a.view_mut((j, j), (m - j, n - j));
        let w = block.tr_mul(&v);
        block.ger(-2.0, &v, &w, 1.0);
        reflectors.push(v);
    }
    let r = a.view((0, 0), (n, n)).upper_triangle();
    let mut q = DMatrix::identity(m, m);
    for (j, v) in reflectors.iter().enumerate() {
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let mut block = q.view_mut((0, j), (m, m - j));
        let w = &block * v;
        block.ger(-2.0, &w, v, 1.0);
    }
    (q, r)
}

pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn chol_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut acc = y[i];
        for k in 0..i {
            acc -= l[(i, k)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in i + 1..n {
            acc -= l[(k, i)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    y
}

/// Solves `R x = b` for upper-triangular `R`.
fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in i + 1..n {
            acc -= r[(i, k)] * x[k];
        }
        x[i] = acc / r[(i, i)];
    }
    x
}

/// Solves `Rᵀ x = b` for upper-triangular `R`.
fn forward_substitute_transposed(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut acc = x[i];
        for k in 0..i {
            acc -= r[(k, i)] * x[k];
        }
        x[i] = acc / r[(i, i)];
    }
    x
}
