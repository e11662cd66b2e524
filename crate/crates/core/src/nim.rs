//! Node influence maximization: topology and feature influence of a fixed
//! seed set (the unlearning entities) and greedy, thresholded, budgeted
//! selection of the nodes they influence most.
//!
//! For the linear propagation `X̃ = ΠX` the Jacobian `∂X̃_v/∂X_u` is
//! `Π_vu · I`, so topology influence is `|Π_vu|` (the feature-dimension
//! factor cancels under normalization). Feature influence additionally
//! weights by the probability that `u` and `v` receive the same class under
//! the original model's soft labels `Z`: `|Π_vu| · ⟨Z_v, Z_u⟩`.
//!
//! Normalized influence of a seed set `S` on `v` is
//! `max_{u∈S} I(v,u) / Σ_{o∈S} I(v,o)` per channel; the selection score adds
//! the two channels and so lies in `[0, 2]`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par::{self, Exec};
use crate::propagation::{propagation_column, propagation_columns, PropagationConfig, SparseOperator};

/// Seed columns computed per propagation batch.
const COLUMN_BLOCK: usize = 128;

pub fn topology_influence(op: &SparseOperator, config: &PropagationConfig, u: usize) -> Result<Array1<f64>> {
    Ok(propagation_column(op, config, u)?.mapv(f64::abs))
}

pub fn feature_influence(
    op: &SparseOperator,
    config: &PropagationConfig,
    soft_labels: ArrayView2<'_, f64>,
    u: usize,
) -> Result<Array1<f64>> {
    check_soft_labels(soft_labels, op.dim())?;
    let topo = topology_influence(op, config, u)?;
    Ok(feature_from_topology(topo.view(), soft_labels, u))
}

fn feature_from_topology(topo: ArrayView1<'_, f64>, z: ArrayView2<'_, f64>, u: usize) -> Array1<f64> {
    let same_class = z.dot(&z.row(u));
    &topo * &same_class
}

fn check_soft_labels(z: ArrayView2<'_, f64>, n: usize) -> Result<()> {
    if z.nrows() != n {
        return Err(Error::shape(format!("{n} soft-label rows"), z.nrows()));
    }
    for (v, row) in z.rows().into_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Data(format!("soft labels of node {v} are not a distribution (sum {s})")));
        }
    }
    Ok(())
}

/// Raw influence vectors of one seed on every node.
#[derive(Clone, Debug)]
pub struct SeedInfluence {
    pub seed: usize,
    pub topology: Array1<f64>,
    pub feature: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InfluenceEntry {
    pub node: usize,
    /// Largest raw topology influence of any seed on this node.
    pub raw_topology: f64,
    pub raw_feature: f64,
    pub topology: f64,
    pub feature: f64,
    pub combined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfluenceTable {
    /// One entry per non-seed node, in id order.
    pub entries: Vec<InfluenceEntry>,
    /// Incremented every time the seed set changes.
    pub version: u64,
}

impl InfluenceTable {
    pub fn get(&self, node: usize) -> Option<&InfluenceEntry> {
        self.entries
            .binary_search_by_key(&node, |e| e.node)
            .ok()
            .map(|i| &self.entries[i])
    }
}

/// Running per-node sums and maxima of raw influence over the current seeds.
#[derive(Clone, Debug)]
pub struct InfluenceAccumulator {
    is_seed: Vec<bool>,
    sum_t: Vec<f64>,
    max_t: Vec<f64>,
    sum_f: Vec<f64>,
    max_f: Vec<f64>,
    version: u64,
}

impl InfluenceAccumulator {
    pub fn new(n: usize) -> Self {
        InfluenceAccumulator {
            is_seed: vec![false; n],
            sum_t: vec![0.0; n],
            max_t: vec![0.0; n],
            sum_f: vec![0.0; n],
            max_f: vec![0.0; n],
            version: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.is_seed.len()
    }

    pub fn is_seed(&self, v: usize) -> bool {
        self.is_seed[v]
    }

    pub fn add_seed(&mut self, seed: usize, topology: ArrayView1<'_, f64>, feature: ArrayView1<'_, f64>) {
        self.is_seed[seed] = true;
        self.version += 1;
        for (v, (&t, &f)) in topology.iter().zip(feature.iter()).enumerate() {
            self.sum_t[v] += t;
            self.max_t[v] = self.max_t[v].max(t);
            self.sum_f[v] += f;
            self.max_f[v] = self.max_f[v].max(f);
        }
    }

    fn share(max: f64, sum: f64) -> f64 {
        if sum > 0.0 {
            (max / sum).min(1.0)
        } else {
            0.0
        }
    }

    /// Normalized `(topology, feature)` influence of the seed set on `v`.
    pub fn channels(&self, v: usize) -> (f64, f64) {
        (
            Self::share(self.max_t[v], self.sum_t[v]),
            Self::share(self.max_f[v], self.sum_f[v]),
        )
    }

    pub fn score(&self, v: usize) -> f64 {
        let (t, f) = self.channels(v);
        t + f
    }

    pub fn table(&self) -> InfluenceTable {
        let entries = (0..self.n())
            .filter(|&v| !self.is_seed[v])
            .map(|v| {
                let (topology, feature) = self.channels(v);
                InfluenceEntry {
                    node: v,
                    raw_topology: self.max_t[v],
                    raw_feature: self.max_f[v],
                    topology,
                    feature,
                    combined: topology + feature,
                }
            })
            .collect();
        InfluenceTable {
            entries,
            version: self.version,
        }
    }
}

pub fn normalize_influence(raw: &[SeedInfluence]) -> Result<InfluenceTable> {
    let first = raw.first().ok_or_else(|| Error::Config("seed set is empty".into()))?;
    let n = first.topology.len();
    let mut acc = InfluenceAccumulator::new(n);
    for s in raw {
        if s.topology.len() != n || s.feature.len() != n {
            return Err(Error::shape(format!("influence vectors of length {n}"), s.topology.len()));
        }
        if s.seed >= n {
            return Err(Error::Index { id: s.seed, n });
        }
        acc.add_seed(s.seed, s.topology.view(), s.feature.view());
    }
    Ok(acc.table())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedMode {
    /// Seeds stay equal to the unlearning entities.
    Static,
    /// Every selected node joins the seed set for later rounds.
    Expanding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HieEntry {
    pub node: usize,
    pub score: f64,
    pub round: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HieSelection {
    pub selected: Vec<HieEntry>,
    pub theta: f64,
    pub budget: usize,
    pub mode: SeedMode,
}

impl HieSelection {
    pub fn nodes(&self) -> Vec<usize> {
        self.selected.iter().map(|e| e.node).collect()
    }

    /// CSV export with header `node,score,round`, greedy order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,score,round\n");
        for e in &self.selected {
            let _ = writeln!(out, "{},{},{}", e.node, e.score, e.round);
        }
        out
    }
}

/// Raw influence of every seed in `seeds`, accumulated in seed order.
pub fn accumulate_seeds(
    op: &SparseOperator,
    config: &PropagationConfig,
    soft_labels: ArrayView2<'_, f64>,
    seeds: &[usize],
    acc: &mut InfluenceAccumulator,
    exec: Exec,
) -> Result<()> {
    for block in seeds.chunks(COLUMN_BLOCK) {
        let cols = propagation_columns(op, config, block, exec)?.mapv(f64::abs);
        for (j, &u) in block.iter().enumerate() {
            let topo = cols.column(j);
            let feat = feature_from_topology(topo, soft_labels, u);
            acc.add_seed(u, topo, feat.view());
        }
    }
    Ok(())
}

/// Greedy selection of high-influence entities for the seed set `ue`.
///
/// Each round scores every remaining candidate, takes the best one (ties to
/// the smallest id) and stops once the budget is spent or the best score is
/// below `theta`.
#[allow(clippy::too_many_arguments)]
pub fn select_hie(
    op: &SparseOperator,
    config: &PropagationConfig,
    ue: &[usize],
    soft_labels: ArrayView2<'_, f64>,
    theta: f64,
    budget: usize,
    mode: SeedMode,
    exec: Exec,
) -> Result<HieSelection> {
    let n = op.dim();
    if ue.is_empty() {
        return Err(Error::Config("unlearning entity set is empty".into()));
    }
    if !(theta >= 0.0) {
        return Err(Error::Config(format!("threshold {theta} must be non-negative")));
    }
    if let Some(&u) = ue.iter().find(|&&u| u >= n) {
        return Err(Error::Index { id: u, n });
    }
    check_soft_labels(soft_labels, n)?;

    let mut acc = InfluenceAccumulator::new(n);
    let mut seeds = ue.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    accumulate_seeds(op, config, soft_labels, &seeds, &mut acc, exec)?;

    let mut candidates: Vec<usize> = (0..n).filter(|&v| !acc.is_seed(v)).collect();
    let mut selected = Vec::new();
    for round in 1..=budget {
        let Some((v, score)) = par::argmax(exec, &candidates, |v| acc.score(v)) else {
            break;
        };
        if score < theta {
            break;
        }
        selected.push(HieEntry { node: v, score, round });
        let pos = candidates.binary_search(&v).expect("winner is a candidate");
        candidates.remove(pos);
        if mode == SeedMode::Expanding {
            accumulate_seeds(op, config, soft_labels, &[v], &mut acc, exec)?;
        }
    }
    Ok(HieSelection {
        selected,
        theta,
        budget,
        mode,
    })
}

/// Nodes at graph distance `1..=hops` from any unlearning entity.
pub fn khop_hie(graph: &Graph, ue: &[usize], hops: usize) -> Result<Vec<usize>> {
    if hops == 0 {
        return Err(Error::Config("k-hop selection needs at least one hop".into()));
    }
    let n = graph.n();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &u in ue {
        graph.check_node(u)?;
        if dist[u] != 0 {
            dist[u] = 0;
            queue.push_back(u);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == hops {
            continue;
        }
        for &v in graph.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    Ok((0..n).filter(|&v| dist[v] != 0 && dist[v] != usize::MAX).collect())
}
