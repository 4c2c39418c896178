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

//! `tube-rl` command line: run, check, plot and sweep.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use tube_rl::harness::{checks, report, run_episode, run_sweep, svg, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tube-rl", version, about = "Safe Q-learning over tube-based robust MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop learning episode and write its logs.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to `output.dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Check,
    /// Render the snapshots of a run directory as SVG.
    Plot {
        run_dir: PathBuf,
        /// Where to write the SVG files; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo sweep over consecutive seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// Write per-seed results as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Splits `--section.key=value` overrides from the regular arguments.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let (overrides, rest) = args
        .into_iter()
        .partition(|a: &String| a.strip_prefix("--").and_then(|r| r.split_once('=')).is_some_and(|(k, _)| k.contains('.')));
    (rest, overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match execute(cli.command, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn exit_for(unexplained: usize) -> ExitCode {
    ExitCode::from(unexplained.min(255) as u8)
}

fn execute(cmd: Command, overrides: &[String]) -> Result<ExitCode> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(config.as_deref(), overrides)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let log = run_episode(&cfg)?;
            report::write_run(&log, &cfg, &dir).with_context(|| format!("writing {}", dir.display()))?;
            print!("{}", report::summary(&log));
            info!("logs written to {}", dir.display());
            Ok(exit_for(log.unexplained_violations()))
        }
        Command::Check => {
            let results = checks::run_all();
            for r in &results {
                println!("{} {:<14} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            Ok(exit_for(failed))
        }
        Command::Plot { run_dir, out } => {
            let dir = out.unwrap_or_else(|| run_dir.clone());
            std::fs::create_dir_all(&dir)?;
            let snaps = report::read_snapshots(&run_dir)?;
            anyhow::ensure!(!snaps.is_empty(), "no snapshots in {}", run_dir.display());
            for s in &snaps {
                let path = report::snapshot_path(&dir, s.t, "svg");
                std::fs::write(&path, svg::render(s)?)?;
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, seeds, first_seed, csv } => {
            let cfg = ExperimentConfig::load(config.as_deref(), overrides)?;
            let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let results = run_sweep(&cfg, &seed_list)?;
            let mut unexplained = 0;
            let mut rows = Vec::new();
            for r in &results {
                unexplained += r.unexplained_violations;
                rows.push(format!(
                    "{},{},{},{},{:.16e},{:.16e},{:.16e}",
                    r.seed,
                    r.violations,
                    r.unexplained_violations,
                    r.sdc_events,
                    r.max_slack,
                    r.total_cost,
                    r.final_terminal_area
                ));
            }
            let header = "seed,violations,unexplained_violations,sdc_events,max_slack,total_cost,final_terminal_area";
            match csv {
                Some(path) => std::fs::write(&path, format!("{header}\n{}\n", rows.join("\n")))?,
                None => println!("{header}\n{}", rows.join("\n")),
            }
            let violations: usize = results.iter().map(|r| r.violations).sum();
            eprintln!("{} episodes, {violations} violations, {unexplained} unexplained", results.len());
            Ok(exit_for(unexplained))
        }
    }
}
