mod common;

use common::{plain_graph, rng};
use gunlearn::datagen::{generate_sbm, SbmSpec};
use gunlearn::eval::{
    append_metrics, auc, edge_attack_run, f1_score, mia_attack, mia_with_scores, posterior_score, read_metrics,
    sample_noise_edges, MetricRecord,
};
use gunlearn::model::{init_model, Mode};
use gunlearn::pipeline::RunConfig;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

proptest! {
    #[test]
    fn auc_matches_pair_counting(raw in prop::collection::vec((0i32..6, any::<bool>()), 2..40)) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
        let positive: Vec<bool> = raw.iter().map(|r| r.1).collect();
        prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
        let a = auc(&scores, &positive).unwrap();
        prop_assert!((a - pairwise_auc(&scores, &positive)).abs() < 1e-12);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&negated, &positive).unwrap() - (1.0 - a)).abs() < 1e-12);
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 1.0).collect();
        prop_assert_eq!(auc(&shifted, &positive).unwrap(), a);
    }
}

#[test]
fn auc_degenerate_inputs() {
    assert_eq!(auc(&[0.1, 0.2], &[true, true]).unwrap_err().class(), "MetricError");
    assert_eq!(auc(&[f64::NAN, 0.2], &[true, false]).unwrap_err().class(), "MetricError");
    assert_eq!(auc(&[0.3, 0.3, 0.3], &[true, false, false]).unwrap(), 0.5);
}

#[test]
fn f1_is_accuracy_on_the_mask() {
    let pred = [0, 1, 1, 2, 0];
    let labels = [Some(0), Some(1), Some(2), Some(2), None];
    assert_eq!(f1_score(&pred, &labels, &[0, 1, 2, 3]).unwrap(), 0.75);
    assert_eq!(f1_score(&pred, &labels, &[]).unwrap_err().class(), "MetricError");
    assert_eq!(f1_score(&pred, &labels, &[4]).unwrap_err().class(), "DataError");
}

#[test]
fn membership_scores_of_identically_distributed_probes_center_on_half() {
    let members: Vec<usize> = (0..40).collect();
    let pool: Vec<usize> = (40..400).collect();
    let mut total = 0.0;
    for seed in 0..200 {
        let mut r = rng(seed);
        let report = mia_with_scores(&members, &pool, seed, "null", |probes| {
            Ok(probes.iter().map(|_| r.random::<f64>()).collect())
        })
        .unwrap();
        assert_eq!((report.members, report.non_members), (40, 40));
        total += report.auc;
    }
    // the AUC of 40 vs 40 iid scores has standard deviation ≈ 0.065
    assert!((total / 200.0 - 0.5).abs() < 0.02, "{}", total / 200.0);
}

#[test]
fn posterior_attack_extremes() {
    let members: Vec<usize> = (0..5).collect();
    let pool: Vec<usize> = (5..20).collect();
    let mut p = init_model(3, 0, 3, Mode::Linear, 0).unwrap();
    p.predict.weight.fill(0.0);
    p.predict.bias.fill(0.0);
    let x = Array2::from_elem((20, 3), 1.0);
    assert_eq!(mia_attack(&p, x.view(), &members, &pool, 1).unwrap().auc, 0.5);

    // members sit far along the first axis and get near one-hot posteriors
    p.predict.weight = Array2::eye(3) * 50.0;
    let x = Array2::from_shape_fn((20, 3), |(v, j)| if v < 5 && j == 0 { 1.0 } else { 0.0 });
    assert_eq!(mia_attack(&p, x.view(), &members, &pool, 1).unwrap().auc, 1.0);
    assert!((posterior_score(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
    assert!((posterior_score(&[0.5, 0.5]) - (0.5 - 2f64.ln())).abs() < 1e-15);
}

#[test]
fn membership_pool_must_cover_the_members() {
    let err = mia_with_scores(&[0, 1, 2], &[5, 6], 0, "x", |p| Ok(vec![0.0; p.len()])).unwrap_err();
    assert_eq!(err.class(), "ConfigError");
}

#[test]
fn noise_edges_are_new_cross_label_training_pairs() {
    let g = generate_sbm(&SbmSpec { n: 300, seed: 4, ..SbmSpec::default() }).unwrap();
    let edges = sample_noise_edges(&g, 0.2, 8).unwrap();
    assert_eq!(edges.len(), (0.2 * g.num_edges() as f64).ceil() as usize);
    let mut seen = std::collections::BTreeSet::new();
    for &(u, v) in &edges {
        assert!(u < v && seen.insert((u, v)));
        assert!(!g.has_edge(u, v) && g.is_train(u) && g.is_train(v));
        assert_ne!(g.label(u), g.label(v));
    }
    for rho in [0.0, 0.6, f64::NAN] {
        assert_eq!(sample_noise_edges(&g, rho, 0).unwrap_err().class(), "ConfigError");
    }
    let tiny = plain_graph(4, &[(0, 1), (1, 2), (2, 3)]);
    assert_eq!(sample_noise_edges(&tiny, 0.3, 0).unwrap_err().class(), "DataError");
}

#[test]
fn edge_attack_leaves_the_clean_graph_alone() {
    let cfg = RunConfig::from_json(r#"{"data.n": 300, "model.epochs": 40, "unlearn.epochs": 5}"#).unwrap();
    let g = generate_sbm(&SbmSpec { seed: 2, ..cfg.data.clone() }).unwrap();
    let before = g.clone();
    let report = edge_attack_run(&g, 0.1, &cfg, 2).unwrap();
    assert_eq!(g, before);
    for f1 in [report.f1_clean, report.f1_poisoned, report.f1_unlearned] {
        assert!((0.0..=1.0).contains(&f1));
    }
    assert_eq!(report, edge_attack_run(&g, 0.1, &cfg, 2).unwrap());
}

#[test]
fn metrics_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let a = vec![MetricRecord::new("r", 1, "unlearn", "mia_auc", 0.5625)];
    let b = vec![MetricRecord::new("r", 2, "edge:0.1", "f1_clean", 0.1 + 0.2)];
    append_metrics(&path, &a).unwrap();
    append_metrics(&path, &b).unwrap();
    assert_eq!(read_metrics(&path).unwrap(), [a, b].concat());
    std::fs::write(&path, "{\"run_id\": 3}\n").unwrap();
    assert!(read_metrics(&path).is_err());
}
