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

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn model() -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    (DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]), DMatrix::from_column_slice(2, 1, &[0.05, 0.1]), DVector::zeros(2))
}

fn v2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_column_slice(&[x, y])
}

fn tr(s: DVector<f64>, a: f64, s_plus: DVector<f64>) -> Transition {
    Transition { s, a: DVector::from_element(1, a), s_plus, t: 0 }
}

fn small_box(h: f64) -> FacetPolytope {
    FacetPolytope::axis_box(&v2(-h, -h), &v2(h, h))
}

#[test]
fn residual_examples() {
    let (a, b, c) = model();
    let w = residual(&tr(v2(1.0, 1.0), 1.0, v2(1.15, 1.1)), &a, &b, &c).w;
    assert!(w.amax() < 1e-15);
    let w = residual(&tr(v2(0.0, 0.0), 0.0, v2(0.01, 0.0)), &a, &b, &c).w;
    assert_eq!(w, v2(0.01, 0.0));
}

fn seeded_store(w: &mut FacetPolytope) -> Datastore {
    let mut ds = Datastore::new(2, DatastoreConfig { warmup: 4, ..Default::default() });
    for p in [v2(0.01, 0.0), v2(-0.01, 0.0), v2(0.0, 0.01), v2(0.0, -0.01)] {
        ds.ingest_residual(0, &p, w).unwrap();
    }
    ds
}

#[test]
fn ingest_reports() {
    let mut w = small_box(0.02);
    let mut ds = seeded_store(&mut w);
    assert!(!ds.in_fallback());
    let r = ds.ingest_residual(1, &v2(0.002, 0.001), &mut w).unwrap();
    assert_eq!((r.hull_changed, r.sdc_violated), (false, false));
    let r = ds.ingest_residual(2, &v2(0.015, 0.015), &mut w).unwrap();
    assert_eq!((r.hull_changed, r.sdc_violated), (true, false));
    let before = w.clone();
    let r = ds.ingest_residual(3, &v2(0.03, 0.0), &mut w).unwrap();
    assert_eq!((r.hull_changed, r.sdc_violated), (true, true));
    assert!((r.violation_magnitude - before.facet_violation(&v2(0.03, 0.0))).abs() < 1e-15);
    assert!(w.facet_violation(&v2(0.03, 0.0)) <= 0.0);
    assert_eq!(ds.log().len(), 7);
}

#[test]
fn ingest_through_model() {
    let (a, b, c) = model();
    let mut w = small_box(0.02);
    let mut ds = seeded_store(&mut w);
    let r = ds.ingest(&tr(v2(0.0, 0.0), 0.0, v2(0.05, 0.0)), &a, &b, &c, &mut w).unwrap();
    assert!(r.sdc_violated);
    assert!((r.violation_magnitude - 0.03).abs() < 1e-15);
}

#[test]
fn sdc_row_count_and_strict_satisfaction() {
    let mut w = small_box(0.02);
    let ds = seeded_store(&mut w);
    let rows = ds.sdc_rows();
    assert_eq!(rows.n_rows(w.n_facets()), 16);
    assert!(rows.violation(&w) < 0.0);
}

#[test]
fn fallback_until_origin_enclosed() {
    let mut w = small_box(0.05);
    let mut ds = Datastore::new(2, DatastoreConfig { warmup: 3, ..Default::default() });
    for p in [v2(0.01, 0.01), v2(0.02, 0.01), v2(0.01, 0.02), v2(0.015, 0.015)] {
        ds.ingest_residual(0, &p, &mut w).unwrap();
    }
    assert!(ds.in_fallback());
    assert_eq!(ds.hull().len(), 3);
    ds.ingest_residual(0, &v2(-0.02, -0.02), &mut w).unwrap();
    assert!(!ds.in_fallback());
    assert_eq!(ds.hull().len(), 3);
}

#[test]
fn debug_buffer_is_a_ring() {
    let mut w = small_box(0.05);
    let mut ds = Datastore::new(2, DatastoreConfig { warmup: 1, debug_buffer: Some(3), max_vertices: None });
    for i in 0..5 {
        ds.ingest_residual(i, &v2(0.001 * i as f64, 0.0), &mut w).unwrap();
    }
    let raw: Vec<f64> = ds.raw_residuals().map(|v| v[0]).collect();
    assert_eq!(raw, vec![0.002, 0.003, 0.004]);
}

/// Random octagon-like residual cloud.
fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| v2(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02))).collect()
}

#[test]
fn hull_and_raw_samples_agree_on_random_sdc() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut w = small_box(0.05);
    let mut ds = Datastore::new(2, DatastoreConfig::default());
    for (t, p) in cloud(&mut rng, 300).iter().enumerate() {
        ds.ingest_residual(t, p, &mut w).unwrap();
    }
    let rows = ds.sdc_rows();
    let mut agree = 0;
    for _ in 0..50 {
        let m = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let off = DVector::from_fn(4, |_, _| rng.random_range(0.0..0.03));
        let cand = FacetPolytope { normals: m, offsets: off };
        let on_hull = rows.satisfied(&cand, 0.0);
        let on_raw = ds.raw_residuals().all(|v| cand.facet_violation(v) <= 0.0);
        if on_hull == on_raw {
            agree += 1;
        }
    }
    assert_eq!(agree, 50);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ingest_keeps_invariants(pts in proptest::collection::vec((-0.05f64..0.05, -0.05f64..0.05), 1..40)) {
        let mut w = small_box(0.01);
        let mut ds = Datastore::new(2, DatastoreConfig { warmup: 5, ..Default::default() });
        for (t, &(x, y)) in pts.iter().enumerate() {
            let p = v2(x, y);
            ds.ingest_residual(t, &p, &mut w).unwrap();
            prop_assert!(w.facet_violation(&p) <= 0.0);
            prop_assert!(ds.hull().len() <= ds.n_samples());
        }
        for p in ds.raw_residuals() {
            prop_assert!(ds.hull().contains_point(p).unwrap());
            prop_assert!(w.facet_violation(p) <= 1e-15);
        }
    }
}
