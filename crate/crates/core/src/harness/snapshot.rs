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

//! Periodic geometry snapshots and their text format.
//!
//! ```text
//! snapshot t=24
//! [state]
//! points n=1
//! -1.0000000000000000e0 0.0000000000000000e0
//! end
//! [w_set]
//! facet_polytope dim=2 facets=4
//! ...
//! end
//! ```
//!
//! Sections appear in a fixed order; `tightened` holds one facet block per
//! predicted stage.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use super::HarnessError;
use crate::polytope::{FacetPolytope, VertexPolytope};

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub state: DVector<f64>,
    pub w_set: FacetPolytope,
    pub hull: VertexPolytope,
    /// `{x : G x + g <= 0}`.
    pub terminal: FacetPolytope,
    /// State constraint set.
    pub state_set: FacetPolytope,
    /// `{x : (C − D K) x + c̄ <= 0}`.
    pub feedback_set: FacetPolytope,
    /// Tightened state sets for stages `1..N-1`.
    pub tightened: Vec<FacetPolytope>,
    pub predicted: Vec<DVector<f64>>,
    pub rpi_cloud: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
    /// Vertices of the true noise support.
    pub noise_support: Vec<DVector<f64>>,
}

fn write_points(f: &mut fmt::Formatter<'_>, pts: &[DVector<f64>]) -> fmt::Result {
    writeln!(f, "points n={}", pts.len())?;
    for p in pts {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(f, "{}", row.join(" "))?;
    }
    writeln!(f, "end")
}

impl fmt::Display for Snapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "snapshot t={}", self.t)?;
        writeln!(f, "[state]")?;
        write_points(f, std::slice::from_ref(&self.state))?;
        for (name, p) in [
            ("w_set", &self.w_set),
            ("terminal", &self.terminal),
            ("state_set", &self.state_set),
            ("feedback_set", &self.feedback_set),
        ] {
            writeln!(f, "[{name}]")?;
            write!(f, "{p}")?;
        }
        writeln!(f, "[hull]")?;
        write!(f, "{}", self.hull)?;
        writeln!(f, "[tightened] n={}", self.tightened.len())?;
        for p in &self.tightened {
            write!(f, "{p}")?;
        }
        for (name, pts) in [
            ("predicted", &self.predicted),
            ("rpi_cloud", &self.rpi_cloud),
            ("residuals", &self.residuals),
            ("noise_support", &self.noise_support),
        ] {
            writeln!(f, "[{name}]")?;
            write_points(f, pts)?;
        }
        Ok(())
    }
}

fn perr(msg: impl Into<String>) -> HarnessError {
    HarnessError::Parse(msg.into())
}

/// Line cursor over a snapshot file.
struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<&'a str, HarnessError> {
        let l = self.lines.get(self.pos).copied().ok_or_else(|| perr("unexpected end of snapshot"))?;
        self.pos += 1;
        Ok(l)
    }

    fn section(&mut self, name: &str) -> Result<&'a str, HarnessError> {
        let l = self.next()?;
        let rest = l.strip_prefix(&format!("[{name}]")).ok_or_else(|| perr(format!("expected [{name}], found {l}")))?;
        Ok(rest.trim())
    }

    /// Lines up to and including the next `end`.
    fn block(&mut self) -> Result<String, HarnessError> {
        let mut out = String::new();
        loop {
            let l = self.next()?;
            out.push_str(l);
            out.push('\n');
            if l == "end" {
                return Ok(out);
            }
        }
    }

    fn points(&mut self) -> Result<Vec<DVector<f64>>, HarnessError> {
        let head = self.next()?;
        let n: usize = head
            .strip_prefix("points n=")
            .ok_or_else(|| perr(format!("expected points header, found {head}")))?
            .parse()
            .map_err(|e| perr(format!("point count: {e}")))?;
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let vals = self
                .next()?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| perr(format!("{t}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            pts.push(DVector::from_vec(vals));
        }
        if self.next()? != "end" {
            return Err(perr("points block not closed"));
        }
        Ok(pts)
    }

    fn facet(&mut self) -> Result<FacetPolytope, HarnessError> {
        Ok(self.block()?.parse()?)
    }
}

impl FromStr for Snapshot {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lines = s.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let mut c = Cursor { lines, pos: 0 };
        let head = c.next()?;
        let t = head
            .strip_prefix("snapshot t=")
            .ok_or_else(|| perr("expected snapshot header"))?
            .parse()
            .map_err(|e| perr(format!("t: {e}")))?;
        c.section("state")?;
        let state = c.points()?.into_iter().next().ok_or_else(|| perr("missing state"))?;
        c.section("w_set")?;
        let w_set = c.facet()?;
        c.section("terminal")?;
        let terminal = c.facet()?;
        c.section("state_set")?;
        let state_set = c.facet()?;
        c.section("feedback_set")?;
        let feedback_set = c.facet()?;
        c.section("hull")?;
        let hull: VertexPolytope = c.block()?.parse()?;
        let n: usize = c
            .section("tightened")?
            .strip_prefix("n=")
            .ok_or_else(|| perr("tightened count"))?
            .parse()
            .map_err(|e| perr(format!("tightened count: {e}")))?;
        let tightened = (0..n).map(|_| c.facet()).collect::<Result<Vec<_>, _>>()?;
        c.section("predicted")?;
        let predicted = c.points()?;
        c.section("rpi_cloud")?;
        let rpi_cloud = c.points()?;
        c.section("residuals")?;
        let residuals = c.points()?;
        c.section("noise_support")?;
        let noise_support = c.points()?;
        Ok(Self {
            t,
            state,
            w_set,
            hull,
            terminal,
            state_set,
            feedback_set,
            tightened,
            predicted,
            rpi_cloud,
            residuals,
            noise_support,
        })
    }
}
