//! Brute-force oracles and small fixtures shared by the integration suites.
#![allow(dead_code)]

use gunlearn::datagen::{generate_sbm, SbmSpec};
use gunlearn::model::{forward, init_model, train, Mode, ModelParams, TrainConfig};
use gunlearn::nim::{feature_influence, normalize_influence, select_hie, topology_influence, HieSelection, SeedInfluence, SeedMode};
use gunlearn::pipeline::train_labels;
use gunlearn::unlearn::{apply_removal, EntityPartition, PrepareInputs, RequestKind, UnlearnRequest};
use gunlearn::{build_graph, normalized_adjacency, propagate, Exec, Graph, PropagationConfig, SparseOperator};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn connected_graph(n: usize, extra: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((order[i], order[rng.random_range(0..i)]));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < extra {
                edges.push((u, v));
            }
        }
    }
    plain_graph(n, &edges)
}

/// Graph with unit features, everything labeled 0 and in the training set.
pub fn plain_graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    let train: Vec<usize> = (0..n).collect();
    build_graph(n, edges, Array2::ones((n, 1)), vec![Some(0); n], &train, &[])
        .unwrap()
        .graph
}

pub fn dense_adjacency(graph: &Graph) -> Array2<f64> {
    let n = graph.n();
    let mut a = Array2::zeros((n, n));
    for (u, v) in graph.edges() {
        a[[u, v]] = 1.0;
        a[[v, u]] = 1.0;
    }
    a
}

/// `D̂^{-r} Â D̂^{r-1}` built densely.
pub fn dense_operator(graph: &Graph, r: f64) -> Array2<f64> {
    let n = graph.n();
    let a_hat = dense_adjacency(graph) + Array2::<f64>::eye(n);
    let d: Vec<f64> = a_hat.rows().into_iter().map(|row| row.sum()).collect();
    let left = Array2::from_diag(&ndarray::Array1::from_iter(d.iter().map(|x| x.powf(-r))));
    let right = Array2::from_diag(&ndarray::Array1::from_iter(d.iter().map(|x| x.powf(r - 1.0))));
    left.dot(&a_hat).dot(&right)
}

/// `Σ_l w_l S^l` by explicit dense matrix powers.
pub fn dense_pi(graph: &Graph, config: &PropagationConfig) -> Array2<f64> {
    let s = dense_operator(graph, config.r);
    let n = graph.n();
    let mut power = Array2::<f64>::eye(n);
    let mut pi = Array2::<f64>::zeros((n, n));
    for (l, &w) in config.weights.iter().enumerate() {
        if l > 0 {
            power = power.dot(&s);
        }
        pi.scaled_add(w, &power);
    }
    pi
}

/// Σ over all walks `v = x_0 → … → x_l = u` (self-loops allowed) of
/// `w_l · Π_i 1/d̂_{x_{i-1}}`: the random-walk reading of `Π_vu` at `r = 1`.
pub fn walk_weight(graph: &Graph, weights: &[f64], v: usize, u: usize) -> f64 {
    fn walk(graph: &Graph, weights: &[f64], at: usize, target: usize, len: usize, prob: f64) -> f64 {
        let mut total = if at == target { weights[len] * prob } else { 0.0 };
        if len + 1 < weights.len() {
            let d_hat = (graph.degree(at) + 1) as f64;
            let next = graph.neighbors(at).iter().copied().chain(std::iter::once(at));
            for x in next {
                total += walk(graph, weights, x, target, len + 1, prob / d_hat);
            }
        }
        total
    }
    walk(graph, weights, v, u, 0, 1.0)
}

/// Small trained instance: SBM graph, a node-kind request of `ue_count`
/// training nodes, a NIM-selected HIE and a prepared partition.
pub struct Toy {
    pub graph: Graph,
    pub features: Array2<f64>,
    /// Propagated features of the post-removal graph.
    pub retain: Array2<f64>,
    pub params: ModelParams,
    pub request: UnlearnRequest,
    pub partition: EntityPartition,
}

pub fn toy(mode: Mode, n: usize, ue_count: usize, seed: u64) -> Toy {
    let graph = generate_sbm(&SbmSpec {
        n,
        classes: 3,
        p_in: 0.2,
        p_out: 0.03,
        feature_dim: 6,
        separation: 1.5,
        train_fraction: 0.7,
        seed,
    })
    .unwrap();
    let config = PropagationConfig::gbp(2, 0.5, 0.5).unwrap();
    let features = propagate(&normalized_adjacency(&graph, 0.5), graph.features(), &config).unwrap();
    let hidden = if mode == Mode::Mlp { 5 } else { 0 };
    let init = init_model(6, hidden, 3, mode, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let params = train(init, features.view(), graph.labels(), &graph.train_nodes(), &cfg).unwrap().params;

    let mut r = rng(seed ^ 0x55);
    let mut train_nodes = graph.train_nodes();
    train_nodes.shuffle(&mut r);
    let mut ue: Vec<usize> = train_nodes[..ue_count].to_vec();
    ue.sort_unstable();
    let request = UnlearnRequest::nodes(RequestKind::Node, ue.clone());
    let after = apply_removal(&graph, &request).unwrap();
    let after_features = propagate(&normalized_adjacency(&after, 0.5), after.features(), &config).unwrap();

    let soft = forward(&params, features.view()).unwrap().probs;
    let op = normalized_adjacency(&graph, 0.5);
    let hie = select_hie(&op, &config, &ue, soft.view(), 0.3, 3 * ue.len(), SeedMode::Expanding, Exec::Sequential)
        .unwrap()
        .nodes();
    let mut partition = EntityPartition::new(graph.n(), &ue, &hie).unwrap();
    let labels = train_labels(&graph);
    partition
        .prepare(&PrepareInputs {
            original: &params,
            forget_features: features.view(),
            retain_features: after_features.view(),
            train_labels: &labels,
            classes: 3,
            positives: 3,
            negatives: 3,
            seed,
        })
        .unwrap();
    Toy {
        graph,
        features,
        retain: after_features,
        params,
        request,
        partition,
    }
}

/// Row-wise softmax, written out directly.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Normalized topology influence of `seeds` on `v` from walk enumeration.
pub fn walk_share(graph: &Graph, weights: &[f64], seeds: &[usize], v: usize) -> f64 {
    let raw: Vec<f64> = seeds.iter().map(|&u| walk_weight(graph, weights, v, u)).collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        raw.iter().copied().fold(0.0, f64::max) / sum
    } else {
        0.0
    }
}

/// Random row-stochastic soft labels.
pub fn soft_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut z = Array2::from_shape_simple_fn((n, classes), || rng.random_range(0.01..1.0));
    for mut row in z.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    z
}

/// Scores of every non-seed node, recomputed from scratch for `seeds`.
pub fn exhaustive_scores(
    op: &SparseOperator,
    config: &PropagationConfig,
    z: ArrayView2<'_, f64>,
    seeds: &[usize],
) -> Vec<(usize, f64)> {
    let raw: Vec<SeedInfluence> = seeds
        .iter()
        .map(|&u| SeedInfluence {
            seed: u,
            topology: topology_influence(op, config, u).unwrap(),
            feature: feature_influence(op, config, z, u).unwrap(),
        })
        .collect();
    normalize_influence(&raw).unwrap().entries.iter().map(|e| (e.node, e.combined)).collect()
}

/// Checks every greedy round of `sel` against exhaustive rescoring and
/// returns a description of each violation.
pub fn greedy_violations(
    op: &SparseOperator,
    config: &PropagationConfig,
    z: ArrayView2<'_, f64>,
    ue: &[usize],
    sel: &HieSelection,
) -> Vec<String> {
    let mut out = Vec::new();
    let mut seeds: Vec<usize> = ue.to_vec();
    seeds.sort_unstable();
    let mut taken: Vec<usize> = Vec::new();
    for round in 0..=sel.selected.len() {
        let scores: Vec<(usize, f64)> = exhaustive_scores(op, config, z, &seeds)
            .into_iter()
            .filter(|(v, _)| !taken.contains(v))
            .collect();
        let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let Some(entry) = sel.selected.get(round) else {
            if sel.selected.len() < sel.budget && !scores.is_empty() && best >= sel.theta {
                out.push(format!("stopped after {round} rounds with best score {best} >= theta {}", sel.theta));
            }
            break;
        };
        let first_best = scores.iter().find(|s| s.1 == best).map(|s| s.0);
        if first_best != Some(entry.node) || entry.score != best {
            out.push(format!(
                "round {}: picked {} ({}) but exhaustive best is {first_best:?} ({best})",
                entry.round, entry.node, entry.score
            ));
        }
        if entry.score < sel.theta {
            out.push(format!("round {}: score {} below theta {}", entry.round, entry.score, sel.theta));
        }
        taken.push(entry.node);
        if sel.mode == SeedMode::Expanding {
            seeds.push(entry.node);
        }
    }
    out
}

/// Random small SBM instance with soft labels and an entity set.
pub fn greedy_instance(seed: u64) -> (Graph, Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let n = r.random_range(20..50);
    let graph = generate_sbm(&SbmSpec {
        n,
        classes: 3,
        p_in: 0.25,
        p_out: 0.04,
        feature_dim: 3,
        separation: 1.0,
        train_fraction: 0.5,
        seed,
    })
    .unwrap();
    let z = soft_labels(n, 3, &mut r);
    let k = r.random_range(1..5);
    let mut ue: Vec<usize> = rand::seq::index::sample(&mut r, n, k).into_vec();
    ue.sort_unstable();
    (graph, z, ue)
}
