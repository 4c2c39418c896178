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

//! Planar helpers used for plotting and area comparisons.

use nalgebra::{DVector, Matrix2, Vector2};

use super::FacetPolytope;

/// Vertices of a bounded 2-D facet polytope in counter-clockwise order.
/// Empty when the set is empty or lower dimensional.
pub fn planar_vertices(p: &FacetPolytope) -> Vec<[f64; 2]> {
    assert_eq!(p.dim(), 2, "planar_vertices needs a 2-D polytope");
    let n = p.n_facets();
    let scale = 1.0 + p.offsets.amax();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let a = Matrix2::new(p.normals[(i, 0)], p.normals[(i, 1)], p.normals[(j, 0)], p.normals[(j, 1)]);
            if a.determinant().abs() < 1e-12 {
                continue;
            }
            let Some(x) = a.try_inverse().map(|inv| inv * Vector2::new(p.offsets[i], p.offsets[j])) else {
                continue;
            };
            let w = DVector::from_column_slice(&[x[0], x[1]]);
            if p.facet_violation(&w) <= 1e-9 * scale
                && !pts.iter().any(|q| (q[0] - x[0]).abs() < 1e-10 * scale && (q[1] - x[1]).abs() < 1e-10 * scale)
            {
                pts.push([x[0], x[1]]);
            }
        }
    }
    if pts.len() < 3 {
        return pts;
    }
    let cx = pts.iter().map(|q| q[0]).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|q| q[1]).sum::<f64>() / pts.len() as f64;
    pts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    pts
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc.abs()
}
