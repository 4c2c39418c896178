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

//! Experiment configuration.
//!
//! Configs are TOML files. Any field can be overridden by a dotted key, as in
//! `mpc.horizon=10` or `learning.theta=["M","m","K"]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::mpc::{ParamGroup, ThetaSelection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Row-major rows of `A`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub b_aff: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { a: vec![vec![1.0, 0.1], vec![0.0, 1.0]], b: vec![vec![0.05], vec![0.1]], b_aff: vec![0.0, 0.0] }
    }
}

/// Diagonal stage-cost weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { q: vec![1.0, 0.01], r: vec![0.01] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    pub action_lo: Vec<f64>,
    pub action_hi: Vec<f64>,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self { state_lo: vec![-1.0, -1.0], state_hi: vec![1.0, 1.0], action_lo: vec![-10.0], action_hi: vec![10.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub gamma: f64,
    /// Slack penalty; the default scales with the stage cost.
    pub rho: Option<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 20, gamma: 0.99, rho: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub circumradius: f64,
    /// Ingest the octagon's vertices before the run, so the learned set
    /// always contains the noise support.
    pub seed_support: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { circumradius: 0.02, seed_support: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub enabled: bool,
    pub alpha: f64,
    /// Learnable groups by name: H, h, P, p, C, D, cbar, K, M, m.
    pub theta: Vec<String>,
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub guard_halvings: usize,
    /// Residuals collected before the run to size the initial set.
    pub initial_samples: usize,
    /// Scale applied to the bounding box of the initial residuals.
    pub inflation: f64,
    pub warmup: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 0.1,
            theta: vec!["M".into(), "m".into()],
            eps: 1e-6,
            tol: 1e-6,
            max_iter: 200,
            guard_halvings: 5,
            initial_samples: 20,
            inflation: 2.0,
            warmup: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub enabled: bool,
    /// Perturb every `every`-th step.
    pub every: usize,
    /// `q` is uniform on `[-q_box, q_box]^n_a`.
    pub q_box: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self { enabled: false, every: 5, q_box: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub steps: usize,
    pub seed: u64,
    pub initial_state: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { steps: 200, seed: 0, initial_state: vec![-1.0, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    /// Steps at which snapshots are taken.
    pub snapshots: Vec<usize>,
    /// Disturbance rollouts in the RPI cloud.
    pub rpi_samples: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into(), snapshots: vec![0, 24, 199], rpi_samples: 200 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub cost: CostConfig,
    pub constraints: ConstraintConfig,
    pub mpc: MpcConfig,
    pub noise: NoiseConfig,
    pub learning: LearningConfig,
    pub exploration: ExplorationConfig,
    pub run: RunConfig,
    pub output: OutputConfig,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, HarnessError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(HarnessError::Config(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        Self::from_toml_with_overrides(s, &[])
    }

    /// Parses `s` (possibly empty) and applies `key=value` overrides.
    pub fn from_toml_with_overrides(s: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let cfg_err = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
        let base: ExperimentConfig = toml::from_str(s).map_err(|e| cfg_err(&e))?;
        let mut table = toml::Table::try_from(&base).map_err(|e| cfg_err(&e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| cfg_err(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn a(&self) -> Result<DMatrix<f64>, HarnessError> {
        matrix(&self.model.a, "model.a")
    }

    pub fn b(&self) -> Result<DMatrix<f64>, HarnessError> {
        matrix(&self.model.b, "model.b")
    }

    pub fn b_aff(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.model.b_aff)
    }

    pub fn n_s(&self) -> usize {
        self.model.a.len()
    }

    pub fn n_a(&self) -> usize {
        self.model.b.first().map_or(0, Vec::len)
    }

    pub fn theta_selection(&self) -> Result<ThetaSelection, HarnessError> {
        let groups = self
            .learning
            .theta
            .iter()
            .map(|n| ParamGroup::from_name(n).ok_or_else(|| HarnessError::Config(format!("unknown parameter group {n}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ThetaSelection::new(groups))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let a = self.a()?;
        let b = self.b()?;
        let (ns, na) = (a.nrows(), b.ncols());
        if a.ncols() != ns || b.nrows() != ns || self.model.b_aff.len() != ns {
            return bad("model dimensions disagree");
        }
        if self.cost.q.len() != ns || self.cost.r.len() != na {
            return bad("cost weights must match the state and action sizes");
        }
        if self.cost.q.iter().chain(&self.cost.r).any(|&v| v <= 0.0) {
            return bad("cost weights must be positive");
        }
        let c = &self.constraints;
        if c.state_lo.len() != ns || c.state_hi.len() != ns || c.action_lo.len() != na || c.action_hi.len() != na {
            return bad("constraint bounds must match the state and action sizes");
        }
        if c.state_lo.iter().zip(&c.state_hi).chain(c.action_lo.iter().zip(&c.action_hi)).any(|(l, h)| l >= h) {
            return bad("lower bounds must be below upper bounds");
        }
        if self.mpc.horizon == 0 || !(0.0..=1.0).contains(&self.mpc.gamma) {
            return bad("horizon must be positive and gamma in [0, 1]");
        }
        if self.noise.circumradius < 0.0 {
            return bad("noise.circumradius must be nonnegative");
        }
        if ns != 2 && self.noise.circumradius > 0.0 {
            return bad("octagon noise needs a planar state");
        }
        if !(0.0..=1.0).contains(&self.learning.alpha) {
            return bad("learning.alpha must lie in [0, 1]");
        }
        if self.learning.initial_samples == 0 || self.learning.inflation < 1.0 {
            return bad("learning.initial_samples must be positive and inflation at least 1");
        }
        if self.exploration.every == 0 {
            return bad("exploration.every must be positive");
        }
        if self.run.initial_state.len() != ns {
            return bad("run.initial_state must match the state size");
        }
        self.theta_selection()?;
        Ok(())
    }
}

/// Applies one `dotted.key=value` override. Values are parsed as TOML and
/// fall back to a plain string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), HarnessError> {
    let item = item.trim_start_matches('-');
    let (key, raw) = item.split_once('=').ok_or_else(|| HarnessError::Config(format!("override {item} lacks '='")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        cur = cur
            .get_mut(*p)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| HarnessError::Config(format!("unknown config section {p} in {key}")))?;
    }
    if !cur.contains_key(*last) && !matches!(*last, "rho") {
        return Err(HarnessError::Config(format!("unknown config key {key}")));
    }
    cur.insert((*last).to_string(), value);
    Ok(())
}
