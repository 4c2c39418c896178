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

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::polytope::FacetPolytope;

/// Regular octagon centered at the origin with vertices at angles
/// `kπ/4 + π/8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Octagon {
    pub circumradius: f64,
}

impl Octagon {
    pub fn new(circumradius: f64) -> Self {
        Self { circumradius }
    }

    pub fn vertices(&self) -> Vec<DVector<f64>> {
        (0..8)
            .map(|k| {
                let t = k as f64 * PI / 4.0 + PI / 8.0;
                DVector::from_column_slice(&[self.circumradius * t.cos(), self.circumradius * t.sin()])
            })
            .collect()
    }

    /// Facet description; facet `k` has its normal at angle `kπ/4`.
    pub fn facets(&self) -> FacetPolytope {
        let normals = DMatrix::from_fn(8, 2, |k, j| {
            let t = k as f64 * PI / 4.0;
            if j == 0 {
                t.cos()
            } else {
                t.sin()
            }
        });
        let offsets = DVector::from_element(8, self.circumradius * (PI / 8.0).cos());
        FacetPolytope { normals, offsets }
    }

    /// Uniform sample; also returns the fan triangle it fell in (the
    /// triangle between vertices `k` and `k+1`).
    pub fn sample_with_triangle<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, usize) {
        let verts = self.vertices();
        // All fan triangles have the same area, but keep the weighting
        // explicit for irregular fans.
        let areas: Vec<f64> = (0..8)
            .map(|k| {
                let (p, q) = (&verts[k], &verts[(k + 1) % 8]);
                0.5 * (p[0] * q[1] - p[1] * q[0]).abs()
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let pick: f64 = rng.random::<f64>() * total;
        let mut k = 0;
        let mut acc = areas[0];
        while pick >= acc && k < 7 {
            k += 1;
            acc += areas[k];
        }
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        (&verts[k] * u + &verts[(k + 1) % 8] * v, k)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.sample_with_triangle(rng).0
    }
}
