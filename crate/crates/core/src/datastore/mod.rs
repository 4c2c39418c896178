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

//! Transition ingestion, noise residuals and the sample hull.

use std::collections::VecDeque;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};

use crate::polytope::{FacetPolytope, PolytopeError, VertexPolytope};

/// Samples required before the hull is expected to contain the origin.
pub const DEFAULT_WARMUP: usize = 20;
/// Default capacity of the raw-residual debug buffer.
pub const DEFAULT_DEBUG_BUFFER: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub s_plus: DVector<f64>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseResidual {
    pub w: DVector<f64>,
}

/// `w = s₊ − (A s + B a + b)`.
pub fn residual(tr: &Transition, a: &DMatrix<f64>, b: &DMatrix<f64>, b_aff: &DVector<f64>) -> NoiseResidual {
    NoiseResidual { w: &tr.s_plus - (a * &tr.s + b * &tr.a + b_aff) }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestReport {
    pub hull_changed: bool,
    pub sdc_violated: bool,
    /// `facet_violation(W, w)` before adaptation when positive, else zero.
    pub violation_magnitude: f64,
}

/// One row of the residual log.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRecord {
    pub t: usize,
    pub w: DVector<f64>,
    pub hull_changed: bool,
    pub sdc_violated: bool,
}

/// Sample-based SDC rows `M v_j <= m`, one family per hull vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct SdcRows {
    pub vertices: Vec<DVector<f64>>,
}

impl SdcRows {
    /// Number of scalar constraints against a set with `n_facets` facets.
    pub fn n_rows(&self, n_facets: usize) -> usize {
        n_facets * self.vertices.len()
    }

    /// `max_{i,j} M_i v_j - m_i`, or `-inf` without vertices.
    pub fn violation(&self, w: &FacetPolytope) -> f64 {
        self.vertices.iter().map(|v| w.facet_violation(v)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn satisfied(&self, w: &FacetPolytope, tol: f64) -> bool {
        self.violation(w) <= tol
    }
}

pub fn sdc_rows(hull: &VertexPolytope) -> SdcRows {
    SdcRows { vertices: hull.vertices.clone() }
}

#[derive(Clone, Debug)]
pub struct DatastoreConfig {
    pub warmup: usize,
    /// Raw residuals kept for testing; `None` keeps none.
    pub debug_buffer: Option<usize>,
    pub max_vertices: Option<usize>,
}

impl Default for DatastoreConfig {
    fn default() -> Self {
        Self { warmup: DEFAULT_WARMUP, debug_buffer: Some(DEFAULT_DEBUG_BUFFER), max_vertices: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HullMode {
    Warmup,
    /// The origin is outside the hull: vertices are appended without pruning.
    Fallback,
    Ready,
}

/// Residual store. The hull is the compressed representation; the raw
/// buffer exists for equivalence checks only.
#[derive(Clone, Debug)]
pub struct Datastore {
    cfg: DatastoreConfig,
    dim: usize,
    hull: VertexPolytope,
    mode: HullMode,
    n_samples: usize,
    raw: VecDeque<DVector<f64>>,
    log: Vec<ResidualRecord>,
}

impl Datastore {
    pub fn new(dim: usize, cfg: DatastoreConfig) -> Self {
        let hull = VertexPolytope::new(Vec::new()).with_max_vertices(cfg.max_vertices);
        Self { cfg, dim, hull, mode: HullMode::Warmup, n_samples: 0, raw: VecDeque::new(), log: Vec::new() }
    }

    pub fn hull(&self) -> &VertexPolytope {
        &self.hull
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn raw_residuals(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.raw.iter()
    }

    pub fn log(&self) -> &[ResidualRecord] {
        &self.log
    }

    pub fn sdc_rows(&self) -> SdcRows {
        sdc_rows(&self.hull)
    }

    /// Whether the hull runs in fallback mode (origin not enclosed).
    pub fn in_fallback(&self) -> bool {
        self.mode == HullMode::Fallback
    }

    /// Computes the residual of `tr` under the nominal model and ingests it.
    pub fn ingest(
        &mut self,
        tr: &Transition,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        b_aff: &DVector<f64>,
        w_set: &mut FacetPolytope,
    ) -> Result<IngestReport, PolytopeError> {
        let w = residual(tr, a, b, b_aff).w;
        self.ingest_residual(tr.t, &w, w_set)
    }

    /// Adds `w` to the hull and enlarges `w_set` at once if `w` escapes it.
    pub fn ingest_residual(
        &mut self,
        t: usize,
        w: &DVector<f64>,
        w_set: &mut FacetPolytope,
    ) -> Result<IngestReport, PolytopeError> {
        if w.len() != self.dim || w_set.dim() != self.dim {
            return Err(PolytopeError::DimensionMismatch(format!("residual has length {}, store expects {}", w.len(), self.dim)));
        }
        self.n_samples += 1;
        if let Some(cap) = self.cfg.debug_buffer {
            if cap > 0 {
                if self.raw.len() == cap {
                    self.raw.pop_front();
                }
                self.raw.push_back(w.clone());
            }
        }

        let hull_changed = match self.mode {
            HullMode::Fallback => {
                if self.hull.contains_point(w)? {
                    false
                } else {
                    self.hull.vertices.push(w.clone());
                    true
                }
            }
            HullMode::Warmup | HullMode::Ready => self.hull.insert(w)?,
        };
        if self.mode != HullMode::Ready && self.n_samples >= self.cfg.warmup {
            self.update_mode()?;
        }

        let violation = w_set.facet_violation(w);
        let sdc_violated = violation > 0.0;
        if sdc_violated {
            *w_set = w_set.sdc_adapt(w);
            info!("t={t}: residual escapes W by {violation:e}; offsets raised");
        }
        self.log.push(ResidualRecord { t, w: w.clone(), hull_changed, sdc_violated });
        Ok(IngestReport { hull_changed, sdc_violated, violation_magnitude: violation.max(0.0) })
    }

    fn update_mode(&mut self) -> Result<(), PolytopeError> {
        if self.hull.contains_origin(self.dim)? {
            if self.mode == HullMode::Fallback {
                // Restore a minimal vertex list.
                let pts = std::mem::take(&mut self.hull.vertices);
                for p in &pts {
                    self.hull.insert(p)?;
                }
            }
            self.mode = HullMode::Ready;
        } else if self.mode == HullMode::Warmup {
            warn!("origin outside the hull of the first {} residuals; hull pruning disabled", self.n_samples);
            self.mode = HullMode::Fallback;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
