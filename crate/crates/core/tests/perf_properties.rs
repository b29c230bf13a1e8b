use std::collections::BTreeMap;

use gamorra_core::benchmark::{run_suite, BenchConfig};
use gamorra_core::sim::reference_profile;
use gamorra_core::{OpcodeCostTable, PerfFunction, PerfModel, Stage};
use proptest::prelude::*;

fn samples() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::btree_map(1u32..1_000_000, 0.0f64..500.0, 2..40)
        .prop_map(|m| m.into_iter().map(|(l, t)| (l as f64 * 0.37, t)).collect())
}

#[test]
fn linear_samples() {
    let f = PerfFunction::build(Stage::Vs, &[(10.0, 8.0), (20.0, 9.0)], 7.0).unwrap();
    assert_eq!(f.breakpoints(), &[(0.0, 0.0), (10.0, 1.0), (20.0, 2.0)]);
    assert!((f.extrapolation_slope() - 0.1).abs() < 1e-15);
    assert!((f.eval(30.0) - 3.0).abs() < 1e-12);
}

#[test]
fn noisy_dip_is_flattened() {
    let f = PerfFunction::build(Stage::Ps, &[(10.0, 5.0), (20.0, 4.8), (30.0, 6.0)], 0.0).unwrap();
    assert_eq!(f.breakpoints(), &[(0.0, 0.0), (10.0, 5.0), (20.0, 5.0), (30.0, 6.0)]);
}

#[test]
fn midpoint_and_origin() {
    let f = PerfFunction::from_breakpoints(Stage::Gs, vec![(0.0, 0.0), (10.0, 1.0), (20.0, 2.0)]).unwrap();
    assert_eq!(f.eval(15.0), 1.5);
    assert_eq!(f.eval(0.0), 0.0);
}

#[test]
fn too_few_samples() {
    assert!(PerfFunction::build(Stage::Vs, &[(1.0, 1.0)], 0.0).is_err());
    assert!(PerfFunction::build(Stage::Vs, &[(1.0, 1.0), (1.0, 2.0)], 0.0).is_err());
}

#[test]
fn convex_curve_nodes_are_exact() {
    let pts: Vec<(f64, f64)> = (1..=50).map(|i| (i as f64 * 100.0, 0.002 * (i as f64).powi(2) + i as f64)).collect();
    let f = PerfFunction::build(Stage::Ps, &pts, 0.0).unwrap();
    for &(l, t) in &pts {
        assert_eq!(f.eval(l), t);
    }
}

#[test]
fn vs_function_matches_130_million_adds_per_100_ms() {
    let profile = reference_profile();
    let perf = run_suite(&profile, &BenchConfig::default()).unwrap();
    let add = perf.cost_table(Stage::Vs).unwrap().costs["add"];
    let f = perf.function(Stage::Vs).unwrap();
    // one batch carrying 1.3e8 add operations, as the GPU would time it
    let ms = perf.beta0_baseline_ms + f.eval(1.3e8 * add) / perf.omega as f64;
    assert!((90.0..=110.0).contains(&ms), "{ms}");
}

#[test]
fn pcf_falls_back_to_hull_function() {
    let hs = PerfFunction::from_breakpoints(Stage::Hs, vec![(0.0, 0.0), (1.0, 1.0)]).unwrap();
    let model = PerfModel {
        omega: 1,
        beta0_baseline_ms: 0.0,
        functions: BTreeMap::from([(Stage::Hs, hs.clone())]),
        cost_tables: BTreeMap::new(),
        early_z_discount: 0.0,
    };
    assert_eq!(model.function(Stage::Pcf), Some(&hs));
}

proptest! {
    #[test]
    fn built_functions_are_monotone_and_anchored(s in samples(), baseline in 0.0f64..50.0) {
        let f = PerfFunction::build(Stage::Om, &s, baseline).unwrap();
        prop_assert_eq!(f.eval(0.0), 0.0);
        let max = f.max_load() * 1.5;
        let mut prev = 0.0;
        for i in 0..=400 {
            let t = f.eval(max * i as f64 / 400.0);
            prop_assert!(t >= prev, "dip at step {}", i);
            prev = t;
        }
        for w in f.breakpoints().windows(2) {
            prop_assert!(w[1].0 > w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn breakpoints_are_interpolation_nodes(s in samples()) {
        let f = PerfFunction::build(Stage::Ia, &s, 0.0).unwrap();
        for &(l, t) in f.breakpoints() {
            prop_assert_eq!(f.eval(l), t);
        }
        // running max of the raw samples, recomputed here
        let mut sorted = s.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut m = 0.0f64;
        for (&(l, t), &(bl, bt)) in sorted.iter().zip(&f.breakpoints()[1..]) {
            m = m.max(t);
            prop_assert_eq!((l, m), (bl, bt));
        }
    }

    #[test]
    fn continuous_at_breakpoints(s in samples()) {
        let f = PerfFunction::build(Stage::Ras, &s, 0.0).unwrap();
        for &(l, t) in &f.breakpoints()[1..] {
            let eps = l * 1e-12;
            prop_assert!((f.eval(l - eps) - t).abs() <= 1e-6 * t.max(1.0));
            prop_assert!((f.eval(l + eps) - t).abs() <= 1e-6 * t.max(1.0));
        }
    }

    #[test]
    fn model_json_round_trip(a in samples(), b in samples(), omega in 1u32..4096, ez in 0.0f64..0.99,
                             costs in prop::collection::btree_map("[a-z]{2,6}", 1e-9f64..10.0, 1..8)) {
        let model = PerfModel {
            omega,
            beta0_baseline_ms: 6.966,
            functions: BTreeMap::from([
                (Stage::Vs, PerfFunction::build(Stage::Vs, &a, 0.0).unwrap()),
                (Stage::Tess, PerfFunction::build(Stage::Tess, &b, 1.0).unwrap()),
            ]),
            cost_tables: BTreeMap::from([(Stage::Vs, OpcodeCostTable::new(Stage::Vs, costs).unwrap())]),
            early_z_discount: ez,
        };
        let back = PerfModel::from_json(&model.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }
}
