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

//! CSV logs and snapshot files of a run.

use std::fs;
use std::path::{Path, PathBuf};

use super::{svg, ExperimentConfig, HarnessError, RunLog, Snapshot};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

pub fn write_steps_csv(log: &RunLog, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let (ns, na) = log.records.first().map_or((0, 0), |r| (r.s.len(), r.a.len()));
    let mut header = vec!["t".to_string()];
    header.extend(indexed("s", ns));
    header.extend(indexed("a", na));
    header.extend(indexed("w", ns));
    header.extend(
        [
            "value",
            "psi",
            "slack_total",
            "active_tightenings",
            "hull_size",
            "stage_cost",
            "constraint_residual",
            "explored",
            "sdc_event",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in &log.records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.s.iter().chain(r.a.iter()).chain(r.w.iter()).map(|&v| num(v)));
        row.extend([
            num(r.value),
            num(r.psi),
            num(r.slack_total),
            r.active_tightenings.to_string(),
            r.hull_size.to_string(),
            num(r.stage_cost),
            num(r.constraint_residual),
            r.explored.to_string(),
            r.sdc_event.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals_csv(log: &RunLog, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let n = log.residuals.first().map_or(0, |r| r.w.len());
    let mut header = vec!["t".to_string()];
    header.extend(indexed("w", n));
    header.extend(["hull_changed", "sdc_violated"].map(String::from));
    w.write_record(&header)?;
    for r in &log.residuals {
        let mut row = vec![r.t.to_string()];
        row.extend(r.w.iter().map(|&v| num(v)));
        row.extend([r.hull_changed.to_string(), r.sdc_violated.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_learning_csv(log: &RunLog, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "psi", "psi_star", "proj_grad_norm", "alpha_eff", "sdc_rows", "min_eig_h", "skipped"])?;
    for r in &log.learning {
        w.write_record([
            r.t.to_string(),
            num(r.psi),
            num(r.psi_star),
            num(r.proj_grad_norm),
            num(r.alpha_eff),
            r.sdc_rows.to_string(),
            num(r.min_eig_h),
            r.skipped.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn snapshot_path(dir: &Path, t: usize, ext: &str) -> PathBuf {
    dir.join(format!("snapshot_{t:04}.{ext}"))
}

/// Writes every log, the snapshots (text and SVG), the resolved config and a
/// short summary into `dir`.
pub fn write_run(log: &RunLog, cfg: &ExperimentConfig, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    write_steps_csv(log, &dir.join("steps.csv"))?;
    write_residuals_csv(log, &dir.join("residuals.csv"))?;
    write_learning_csv(log, &dir.join("learning.csv"))?;
    for s in &log.snapshots {
        fs::write(snapshot_path(dir, s.t, "txt"), s.to_string())?;
        if s.state.len() == 2 {
            fs::write(snapshot_path(dir, s.t, "svg"), svg::render(s)?)?;
        }
    }
    fs::write(dir.join("summary.txt"), summary(log))?;
    Ok(())
}

pub fn summary(log: &RunLog) -> String {
    format!(
        "seed {}\nsteps {}\nviolations {}\nunexplained_violations {}\nsdc_events {}\nmax_slack {:e}\ntotal_cost {:.6}\n",
        log.seed,
        log.records.len(),
        log.violations(),
        log.unexplained_violations(),
        log.sdc_events(),
        log.max_slack(),
        log.total_cost()
    )
}

/// Reads all `snapshot_*.txt` files in `dir`, ordered by step.
pub fn read_snapshots(dir: &Path) -> Result<Vec<Snapshot>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("snapshot_") && name.ends_with(".txt") {
            out.push(fs::read_to_string(&path)?.parse::<Snapshot>()?);
        }
    }
    out.sort_by_key(|s| s.t);
    Ok(out)
}
