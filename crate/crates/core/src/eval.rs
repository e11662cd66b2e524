//! Forgetting and reasoning metrics: membership-inference AUC, micro-F1 and
//! the edge-attack experiment.

use std::io::Write;
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, predict_labels, ModelParams};
use crate::pipeline::{self, RunConfig};
use crate::unlearn::UnlearnRequest;

/// Area under the ROC curve of `scores` separating `positive` from the rest,
/// with ties credited one half.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape(format!("{} labels", scores.len()), positive.len()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!("AUC needs both classes, got {pos} positive and {neg} negative")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("AUC scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Micro-averaged F1 over the nodes in `mask`; equal to accuracy.
pub fn f1_score(predictions: &[usize], labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Metric("F1 over an empty node set".into()));
    }
    let mut correct = 0usize;
    for &v in mask {
        let (Some(&p), Some(&label)) = (predictions.get(v), labels.get(v)) else {
            return Err(Error::Index { id: v, n: predictions.len().min(labels.len()) });
        };
        let label = label.ok_or_else(|| Error::Data(format!("node {v} has no label")))?;
        correct += usize::from(p == label);
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// Membership signal of one posterior: max probability minus entropy.
pub fn posterior_score(probs: &[f64]) -> f64 {
    let max = probs.iter().copied().fold(0.0, f64::max);
    let neg_entropy: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum();
    max + neg_entropy
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub node: usize,
    pub member: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub auc: f64,
    pub members: usize,
    pub non_members: usize,
    pub scores: Vec<ProbeScore>,
    pub attack: String,
}

/// Picks `members.len()` non-members from `pool` and scores every probe with
/// `scorer`, which receives the probe node ids in order (members first).
pub fn mia_with_scores<F>(members: &[usize], pool: &[usize], seed: u64, attack: &str, scorer: F) -> Result<AttackReport>
where
    F: FnOnce(&[usize]) -> Result<Vec<f64>>,
{
    if members.is_empty() {
        return Err(Error::Config("membership inference needs at least one member".into()));
    }
    if pool.len() < members.len() {
        return Err(Error::Config(format!(
            "non-member pool of {} is smaller than the {} members",
            pool.len(),
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, pool.len(), members.len()).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    let probes: Vec<usize> = members.iter().chain(&picked).copied().collect();
    let values = scorer(&probes)?;
    if values.len() != probes.len() {
        return Err(Error::shape(format!("{} attack scores", probes.len()), values.len()));
    }
    let member: Vec<bool> = (0..probes.len()).map(|i| i < members.len()).collect();
    let auc = auc(&values, &member)?;
    Ok(AttackReport {
        auc,
        members: members.len(),
        non_members: picked.len(),
        scores: probes
            .iter()
            .zip(&member)
            .zip(&values)
            .map(|((&node, &member), &score)| ProbeScore { node, member, score })
            .collect(),
        attack: attack.to_string(),
    })
}

/// Posterior-based membership inference against `params` on `features`.
pub fn mia_attack(
    params: &ModelParams,
    features: ArrayView2<'_, f64>,
    members: &[usize],
    pool: &[usize],
    seed: u64,
) -> Result<AttackReport> {
    mia_with_scores(members, pool, seed, "max posterior minus entropy", |probes| {
        let x = features.select(ndarray::Axis(0), probes);
        let probs = forward(params, x.view())?.probs;
        Ok(probs.rows().into_iter().map(|r| posterior_score(r.as_slice().expect("standard layout"))).collect())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttackReport {
    pub rho: f64,
    pub f1_clean: f64,
    pub f1_poisoned: f64,
    pub f1_unlearned: f64,
    pub injected: Vec<(usize, usize)>,
}

/// `⌈ρ·m⌉` distinct non-edges between training nodes of different labels.
pub fn sample_noise_edges(graph: &Graph, rho: f64, seed: u64) -> Result<Vec<(usize, usize)>> {
    if !(rho > 0.0 && rho <= 0.5) {
        return Err(Error::Config(format!("noise ratio must lie in (0, 0.5], got {rho}")));
    }
    let count = (rho * graph.num_edges() as f64).ceil() as usize;
    if count == 0 {
        return Err(Error::Config(format!("noise ratio {rho} injects no edge into a graph of {} edges", graph.num_edges())));
    }
    let train = graph.train_nodes();
    let mut by_class: Vec<usize> = vec![0; graph.num_classes()];
    for &v in &train {
        if let Some(c) = graph.label(v) {
            by_class[c] += 1;
        }
    }
    let labeled: usize = by_class.iter().sum();
    let same: usize = by_class.iter().map(|&k| k * k.saturating_sub(1) / 2).sum();
    let cross = labeled * labeled.saturating_sub(1) / 2 - same;
    if cross < count {
        return Err(Error::Data(format!("{cross} cross-label training pairs cannot host {count} noise edges")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count + 100_000 {
            return Err(Error::Data(format!("could not place {count} noise edges")));
        }
        let u = train[rng.random_range(0..train.len())];
        let v = train[rng.random_range(0..train.len())];
        let (Some(a), Some(b)) = (graph.label(u), graph.label(v)) else { continue };
        if a == b || graph.has_edge(u, v) {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if chosen.insert(e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Clean training, poisoning with cross-label edges, and unlearning of exactly
/// those edges. F1 is measured on the test nodes at every stage.
pub fn edge_attack_run(graph: &Graph, rho: f64, cfg: &RunConfig, seed: u64) -> Result<EdgeAttackReport> {
    let injected = sample_noise_edges(graph, rho, pipeline::derive_seed(seed, "edge-attack"))?;
    let test = graph.test_nodes();

    let clean = pipeline::train_on(graph, cfg, seed)?;
    let f1_clean = f1_score(&predict_labels(&clean.params, clean.features.view())?, graph.labels(), &test)?;

    let poisoned_graph = graph.with_edges(&injected);
    let poisoned = pipeline::train_on(&poisoned_graph, cfg, seed)?;
    let f1_poisoned = f1_score(&predict_labels(&poisoned.params, poisoned.features.view())?, graph.labels(), &test)?;

    let request = UnlearnRequest::edges(injected.clone());
    let outcome = pipeline::unlearn(&poisoned_graph, &poisoned.features, &poisoned.params, &request, cfg, seed)?;
    if injected.iter().any(|&(u, v)| outcome.graph.has_edge(u, v)) {
        return Err(Error::State("injected edges survived unlearning".into()));
    }
    Ok(EdgeAttackReport {
        rho,
        f1_clean,
        f1_poisoned,
        f1_unlearned: outcome.f1_non_ue,
        injected,
    })
}

/// One line of a metrics JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub stage: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(run_id: &str, seed: u64, stage: &str, metric: &str, value: f64) -> Self {
        MetricRecord {
            run_id: run_id.to_string(),
            seed,
            stage: stage.to_string(),
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn append_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("metric serializes"));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}: line {}: {e}", path.display(), i + 1))))
        .collect()
}
