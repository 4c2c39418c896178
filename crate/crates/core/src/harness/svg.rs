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

//! SVG rendering of snapshots: state space on the left, noise space on the
//! right.

use std::fmt::Write;

use nalgebra::DVector;

use super::{HarnessError, Snapshot};
use crate::polytope::{planar_vertices, FacetPolytope};

const PANEL: f64 = 420.0;
const MARGIN: f64 = 40.0;

struct Panel {
    left: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Panel {
    fn new(left: f64, pts: &[[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        for i in 0..2 {
            if !lo[i].is_finite() || hi[i] - lo[i] < 1e-12 {
                let c = if lo[i].is_finite() { 0.5 * (lo[i] + hi[i]) } else { 0.0 };
                lo[i] = c - 1.0;
                hi[i] = c + 1.0;
            }
            let pad = 0.08 * (hi[i] - lo[i]);
            lo[i] -= pad;
            hi[i] += pad;
        }
        Self { left, lo, hi }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let x = self.left + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * PANEL;
        let y = MARGIN + PANEL - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * PANEL;
        (x, y)
    }

    fn path(&self, pts: &[[f64; 2]], closed: bool) -> String {
        let mut d = String::new();
        for (i, &p) in pts.iter().enumerate() {
            let (x, y) = self.map(p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if i == 0 { "M" } else { "L" });
        }
        if closed {
            d.push('Z');
        }
        d
    }

    fn polygon(&self, out: &mut String, pts: &[[f64; 2]], style: &str) {
        if pts.len() >= 2 {
            let _ = writeln!(out, r#"<path d="{}" {style}/>"#, self.path(pts, true));
        }
    }

    fn polyline(&self, out: &mut String, pts: &[[f64; 2]], style: &str) {
        if pts.len() >= 2 {
            let _ = writeln!(out, r#"<path d="{}" fill="none" {style}/>"#, self.path(pts, false));
        }
    }

    fn dots(&self, out: &mut String, pts: &[[f64; 2]], r: f64, fill: &str) {
        for &p in pts {
            let (x, y) = self.map(p);
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#);
        }
    }

    fn frame(&self, out: &mut String, title: &str, labels: [&str; 2]) {
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#444"/>"##,
            self.left
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="14">{title}</text>"#, self.left, MARGIN - 12.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11">{}: [{:.3}, {:.3}]  {}: [{:.3}, {:.3}]</text>"#,
            self.left,
            MARGIN + PANEL + 18.0,
            labels[0],
            self.lo[0],
            self.hi[0],
            labels[1],
            self.lo[1],
            self.hi[1]
        );
    }
}

fn pts2(v: &[DVector<f64>]) -> Vec<[f64; 2]> {
    v.iter().filter(|p| p.len() >= 2).map(|p| [p[0], p[1]]).collect()
}

fn poly(p: &FacetPolytope) -> Vec<[f64; 2]> {
    if p.dim() == 2 {
        planar_vertices(p)
    } else {
        Vec::new()
    }
}

/// Counter-clockwise hull of planar points (monotone chain).
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Renders a planar snapshot.
pub fn render(snap: &Snapshot) -> Result<String, HarnessError> {
    if snap.state.len() != 2 {
        return Err(HarnessError::Config("snapshots can only be drawn for planar states".into()));
    }
    let state_box = poly(&snap.state_set);
    let feedback = poly(&snap.feedback_set);
    let terminal = poly(&snap.terminal);
    let w_set = poly(&snap.w_set);
    let support = convex_hull(pts2(&snap.noise_support));
    let hull = convex_hull(pts2(&snap.hull.vertices));
    let residuals = pts2(&snap.residuals);

    let left = Panel::new(MARGIN, &state_box);
    let mut noise_pts = w_set.clone();
    noise_pts.extend(&support);
    noise_pts.extend(&residuals);
    let right = Panel::new(2.0 * MARGIN + PANEL + MARGIN, &noise_pts);

    let width = 2.0 * PANEL + 4.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN + 10.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    left.frame(&mut out, &format!("state space, t = {}", snap.t), ["p", "v"]);
    left.polygon(&mut out, &state_box, r##"fill="#f4f4f4" stroke="#222" stroke-width="1.5""##);
    left.polygon(&mut out, &feedback, r##"fill="none" stroke="#777" stroke-dasharray="5,3""##);
    for t in &snap.tightened {
        left.polygon(&mut out, &poly(t), r##"fill="none" stroke="#6a9fd8" stroke-width="0.6""##);
    }
    left.polygon(&mut out, &terminal, r##"fill="#bfe3bf" fill-opacity="0.7" stroke="#2a7a2a""##);
    let cloud = pts2(&snap.rpi_cloud);
    left.dots(&mut out, &cloud, 1.0, "#c05050");
    let traj = pts2(&snap.predicted);
    left.polyline(&mut out, &traj, r##"stroke="#d04010" stroke-width="1.5""##);
    left.dots(&mut out, &traj, 1.8, "#d04010");
    left.dots(&mut out, &pts2(std::slice::from_ref(&snap.state)), 3.5, "black");

    right.frame(&mut out, "noise space", ["w1", "w2"]);
    right.polygon(&mut out, &support, r##"fill="#eeeeee" stroke="#888""##);
    right.dots(&mut out, &residuals, 1.5, "#333");
    right.polygon(&mut out, &hull, r##"fill="none" stroke="#1f5fbf" stroke-width="1.5""##);
    right.polygon(&mut out, &w_set, r##"fill="none" stroke="#c02020" stroke-width="1.5""##);
    out.push_str("</svg>\n");
    Ok(out)
}
