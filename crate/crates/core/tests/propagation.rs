mod common;

use common::{connected_graph, dense_operator, dense_pi, plain_graph, random_matrix, rng};
use gunlearn::{normalized_adjacency, propagate, propagate_with, propagation_columns, Exec, PropagationConfig};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn scheme(which: u8, k: usize, r: f64) -> PropagationConfig {
    match which % 3 {
        0 => PropagationConfig::sgc(k, r).unwrap(),
        1 => PropagationConfig::s2gc(k, r).unwrap(),
        _ => PropagationConfig::gbp(k, r, 0.3).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_operator_matches_dense(n in 1usize..=8, extra in 0.0f64..0.8, r in 0.0f64..=1.0, seed: u64) {
        let g = connected_graph(n, extra, &mut rng(seed));
        let op = normalized_adjacency(&g, r);
        let dense = dense_operator(&g, r);
        for u in 0..n {
            for v in 0..n {
                prop_assert!((op.get(u, v) - dense[[u, v]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_matches_dense_powers(
        n in 1usize..=8, extra in 0.0f64..0.8, k in 0usize..=4, r in 0.0f64..=1.0, which: u8, seed: u64,
    ) {
        let mut rng = rng(seed);
        let g = connected_graph(n, extra, &mut rng);
        let cfg = scheme(which, k, r);
        let x = random_matrix(n, 3, &mut rng);
        let got = propagate(&normalized_adjacency(&g, r), x.view(), &cfg).unwrap();
        prop_assert!(max_abs(&got, &dense_pi(&g, &cfg).dot(&x)) < 1e-10);
    }

    #[test]
    fn propagation_is_linear(n in 2usize..=12, k in 0usize..=4, a in -3.0f64..3.0, b in -3.0f64..3.0, seed: u64) {
        let mut rng = rng(seed);
        let g = connected_graph(n, 0.3, &mut rng);
        let cfg = PropagationConfig::gbp(k, 0.5, 0.4).unwrap();
        let op = normalized_adjacency(&g, 0.5);
        let x = random_matrix(n, 2, &mut rng);
        let y = random_matrix(n, 2, &mut rng);
        let lhs = propagate(&op, (&x * a + &y * b).view(), &cfg).unwrap();
        let rhs = propagate(&op, x.view(), &cfg).unwrap() * a + propagate(&op, y.view(), &cfg).unwrap() * b;
        prop_assert!(max_abs(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn random_walk_operator_keeps_constants(n in 1usize..=20, k in 0usize..=5, which: u8, seed: u64) {
        let g = connected_graph(n, 0.2, &mut rng(seed));
        let mut cfg = scheme(which, k, 1.0);
        let total: f64 = cfg.weights.iter().sum();
        cfg = PropagationConfig::custom(1.0, cfg.weights.iter().map(|w| w / total).collect()).unwrap();
        let ones = Array2::ones((n, 1));
        let out = propagate(&normalized_adjacency(&g, 1.0), ones.view(), &cfg).unwrap();
        prop_assert!(out.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }
}

#[test]
fn columns_are_propagated_indicators() {
    let mut rng = rng(3);
    let g = connected_graph(15, 0.15, &mut rng);
    let cfg = PropagationConfig::s2gc(3, 0.5).unwrap();
    let op = normalized_adjacency(&g, 0.5);
    let ids = [0, 4, 14];
    let cols = propagation_columns(&op, &cfg, &ids, Exec::Sequential).unwrap();
    let pi = dense_pi(&g, &cfg);
    for (j, &u) in ids.iter().enumerate() {
        let want = pi.column(u);
        assert!(cols.column(j).iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn sgc_on_a_path_by_hand() {
    // 0 - 1 - 2 at r = 1: d̂ = (2, 3, 2)
    let g = plain_graph(3, &[(0, 1), (1, 2)]);
    let cfg = PropagationConfig::sgc(2, 1.0).unwrap();
    let x = Array2::from_shape_vec((3, 1), vec![1.0, 0.0, 0.0]).unwrap();
    let out = propagate(&normalized_adjacency(&g, 1.0), x.view(), &cfg).unwrap();
    let expected = [0.5 * 0.5 + 0.5 / 3.0, (1.0 / 3.0) * 0.5 + (1.0 / 3.0) / 3.0, 0.5 / 3.0];
    for (got, want) in out.column(0).iter().zip(expected) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

#[test]
fn s2gc_averages_the_power_series() {
    let mut rng = rng(11);
    let g = connected_graph(9, 0.3, &mut rng);
    let op = normalized_adjacency(&g, 0.5);
    let x = random_matrix(9, 2, &mut rng);
    let mut mean = Array2::zeros((9, 2));
    for k in 0..=3 {
        mean += &propagate(&op, x.view(), &PropagationConfig::sgc(k, 0.5).unwrap()).unwrap();
    }
    mean /= 4.0;
    let s2 = propagate(&op, x.view(), &PropagationConfig::s2gc(3, 0.5).unwrap()).unwrap();
    assert!(max_abs(&mean, &s2) < 1e-12);
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let mut rng = rng(5);
    let g = connected_graph(300, 0.02, &mut rng);
    let op = normalized_adjacency(&g, 0.5);
    let x = random_matrix(300, 7, &mut rng);
    let cfg = PropagationConfig::gbp(4, 0.5, 0.5).unwrap();
    let seq = propagate_with(&op, x.view(), &cfg, Exec::Sequential).unwrap();
    let par = propagate_with(&op, x.view(), &cfg, Exec::Parallel).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn isolated_node_keeps_its_weighted_features() {
    let g = plain_graph(4, &[(0, 1), (1, 2)]);
    let cfg = PropagationConfig::gbp(3, 0.5, 0.5).unwrap();
    let x = Array2::from_shape_fn((4, 1), |(i, _)| i as f64 + 1.0);
    let out = propagate(&normalized_adjacency(&g, 0.5), x.view(), &cfg).unwrap();
    let w: f64 = cfg.weights.iter().sum();
    assert!((out[[3, 0]] - 4.0 * w).abs() < 1e-12);
    assert_eq!(out.len_of(Axis(0)), 4);
}

#[test]
fn wrong_row_count_is_a_shape_error() {
    let g = plain_graph(3, &[(0, 1)]);
    let x = Array2::zeros((4, 1));
    let err = propagate(&normalized_adjacency(&g, 0.5), x.view(), &PropagationConfig::sgc(1, 0.5).unwrap()).unwrap_err();
    assert_eq!(err.class(), "ShapeError");
}
