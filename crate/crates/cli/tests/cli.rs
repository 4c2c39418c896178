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

use std::path::Path;
use std::process::{Command, Output};

fn tube_rl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tube-rl")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_passes() {
    let out = tube_rl(&["check"]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn short_run_writes_outputs_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = tube_rl(&["run", "--out", run_s, "--run.steps=30", "--output.snapshots=[0,29]"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in
        ["steps.csv", "learning.csv", "residuals.csv", "summary.txt", "config.toml", "snapshot_0000.txt", "snapshot_0029.txt"]
    {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let steps = std::fs::read_to_string(run.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 31);
    let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("steps = 30"));

    let svg = dir.path().join("svg");
    let out = tube_rl(&["plot", run_s, "--out", svg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&svg).join("snapshot_0029.svg").is_file());
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = tube_rl(&["run", "--out", dir.path().to_str().unwrap(), "--run.no_such_key=1"]);
    assert!(!out.status.success());
}
