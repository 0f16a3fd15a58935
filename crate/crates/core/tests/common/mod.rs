#![allow(dead_code)]

use dynbatch::{CostFunction, ProblemInstance};
use proptest::prelude::*;

pub fn builtin_costs() -> Vec<CostFunction> {
    ["sqrt", "log1p", "cap:3,10", "const:1"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

/// Sorted arrival times from gaps; roughly one gap in six is zero.
pub fn times(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 5 => 0.0f64..3.0], 1..=max_n).prop_map(
        |gaps| {
            gaps.iter()
                .scan(0.0, |t, g| {
                    *t += g;
                    Some(*t)
                })
                .collect()
        },
    )
}

pub fn instance(max_n: usize) -> impl Strategy<Value = ProblemInstance> {
    times(max_n).prop_map(|t| ProblemInstance::from_times(t).unwrap())
}

pub fn cost() -> impl Strategy<Value = CostFunction> {
    (0..4usize).prop_map(|i| builtin_costs().swap_remove(i))
}

pub fn assert_close(a: f64, b: f64, rel: f64) {
    let scale = a.abs().max(b.abs()).max(1e-300);
    assert!((a - b).abs() <= rel * scale, "{a} vs {b}");
}
