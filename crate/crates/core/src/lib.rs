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

//! Safe Q-learning over tube-based robust linear MPC.

pub mod datastore;
pub mod harness;
pub mod learner;
pub mod mpc;
pub mod polytope;
pub mod solver;
pub mod tightening;

#[cfg(test)]
mod test_support;
