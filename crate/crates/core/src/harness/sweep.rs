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

use rayon::prelude::*;

use super::{run_episode, ExperimentConfig, HarnessError, RunLog};
use crate::polytope::{planar_vertices, polygon_area, FacetPolytope};

/// Per-episode figures of a Monte-Carlo sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub violations: usize,
    pub unexplained_violations: usize,
    pub sdc_events: usize,
    pub max_slack: f64,
    pub total_cost: f64,
    /// Terminal-set area under the final parameter (planar states only).
    pub final_terminal_area: f64,
}

/// Area of `{x : G x + g <= 0}` for the terminal set of `log`'s final
/// parameter.
pub fn terminal_area(log: &RunLog) -> Result<f64, HarnessError> {
    let prof = log.final_params.build_profile(&crate::mpc::ThetaSelection::new(vec![]))?;
    if prof.g_mat.ncols() != 2 {
        return Ok(f64::NAN);
    }
    let set = FacetPolytope { normals: prof.g_mat, offsets: -prof.g };
    Ok(polygon_area(&planar_vertices(&set)))
}

pub fn summarize(log: &RunLog) -> Result<EpisodeSummary, HarnessError> {
    Ok(EpisodeSummary {
        seed: log.seed,
        violations: log.violations(),
        unexplained_violations: log.unexplained_violations(),
        sdc_events: log.sdc_events(),
        max_slack: log.max_slack(),
        total_cost: log.total_cost(),
        final_terminal_area: terminal_area(log)?,
    })
}

/// Runs `cfg` for each seed in parallel; results keep the seed order.
pub fn run_sweep(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<EpisodeSummary>, HarnessError> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.run.seed = seed;
            summarize(&run_episode(&c)?)
        })
        .collect()
}
