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

//! Plain-text block format for polytopes.
//!
//! ```text
//! facet_polytope dim=2 facets=4
//! row 1.0000000000000000e0 0.0000000000000000e0 | 2.0000000000000000e-2
//! ...
//! end
//! vertex_polytope dim=2 vertices=3
//! v 1.0000000000000000e-2 0.0000000000000000e0
//! ...
//! end
//! ```
//!
//! Numbers carry 17 significant digits so a round trip is exact.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::{FacetPolytope, PolytopeError, VertexPolytope};

fn parse_err(msg: impl Into<String>) -> PolytopeError {
    PolytopeError::Parse(msg.into())
}

fn header_field(tokens: &[&str], key: &str) -> Result<usize, PolytopeError> {
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| parse_err(format!("missing {key}")))?
        .parse()
        .map_err(|e| parse_err(format!("{key}: {e}")))
}

fn parse_numbers(tokens: &[&str]) -> Result<Vec<f64>, PolytopeError> {
    tokens.iter().map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t}: {e}")))).collect()
}

fn body_lines<'a>(s: &'a str, kind: &str) -> Result<(Vec<&'a str>, Vec<&'a str>), PolytopeError> {
    let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_err("empty input"))?.split_whitespace().collect();
    if header.first() != Some(&kind) {
        return Err(parse_err(format!("expected {kind} header")));
    }
    let mut body = Vec::new();
    for l in lines {
        if l == "end" {
            return Ok((header, body));
        }
        body.push(l);
    }
    Err(parse_err("missing end"))
}

impl fmt::Display for FacetPolytope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "facet_polytope dim={} facets={}", self.dim(), self.n_facets())?;
        for i in 0..self.n_facets() {
            write!(f, "row")?;
            for j in 0..self.dim() {
                write!(f, " {:.16e}", self.normals[(i, j)])?;
            }
            writeln!(f, " | {:.16e}", self.offsets[i])?;
        }
        writeln!(f, "end")
    }
}

impl FromStr for FacetPolytope {
    type Err = PolytopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (header, body) = body_lines(s, "facet_polytope")?;
        let dim = header_field(&header, "dim")?;
        let facets = header_field(&header, "facets")?;
        if body.len() != facets {
            return Err(parse_err(format!("expected {facets} rows, found {}", body.len())));
        }
        let mut normals = DMatrix::zeros(facets, dim);
        let mut offsets = DVector::zeros(facets);
        for (i, line) in body.iter().enumerate() {
            let rest = line.strip_prefix("row").ok_or_else(|| parse_err("expected row"))?;
            let (lhs, rhs) = rest.split_once('|').ok_or_else(|| parse_err("missing |"))?;
            let coeffs = parse_numbers(&lhs.split_whitespace().collect::<Vec<_>>())?;
            if coeffs.len() != dim {
                return Err(parse_err(format!("row {i} has {} coefficients", coeffs.len())));
            }
            for (j, c) in coeffs.into_iter().enumerate() {
                normals[(i, j)] = c;
            }
            offsets[i] = rhs.trim().parse().map_err(|e| parse_err(format!("offset: {e}")))?;
        }
        FacetPolytope::new(normals, offsets)
    }
}

impl fmt::Display for VertexPolytope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dim = self.vertices.first().map_or(0, |v| v.len());
        writeln!(f, "vertex_polytope dim={} vertices={}", dim, self.vertices.len())?;
        for v in &self.vertices {
            write!(f, "v")?;
            for x in v.iter() {
                write!(f, " {x:.16e}")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "end")
    }
}

impl FromStr for VertexPolytope {
    type Err = PolytopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (header, body) = body_lines(s, "vertex_polytope")?;
        let dim = header_field(&header, "dim")?;
        let count = header_field(&header, "vertices")?;
        if body.len() != count {
            return Err(parse_err(format!("expected {count} vertices, found {}", body.len())));
        }
        let mut vertices = Vec::with_capacity(count);
        for line in body {
            let rest = line.strip_prefix('v').ok_or_else(|| parse_err("expected v"))?;
            let xs = parse_numbers(&rest.split_whitespace().collect::<Vec<_>>())?;
            if xs.len() != dim {
                return Err(parse_err("vertex dimension"));
            }
            vertices.push(DVector::from_vec(xs));
        }
        Ok(VertexPolytope::new(vertices))
    }
}
