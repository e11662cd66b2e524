//! Immutable graph storage: symmetric CSR topology, dense node features,
//! optional class labels and disjoint train/test masks.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    train_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

/// A freshly built graph plus the number of input self-loops that were dropped.
#[derive(Clone, Debug)]
pub struct Built {
    pub graph: Graph,
    pub dropped_self_loops: usize,
}

/// Builds a canonical graph: edges are symmetrized, deduplicated and sorted;
/// self-loops are dropped and counted.
pub fn build_graph(
    n: usize,
    edges: &[(usize, usize)],
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    train: &[usize],
    test: &[usize],
) -> Result<Built> {
    if features.nrows() != n {
        return Err(Error::shape(
            format!("{n} feature rows"),
            format!("{} feature rows", features.nrows()),
        ));
    }
    if labels.len() != n {
        return Err(Error::shape(
            format!("{n} labels"),
            format!("{} labels", labels.len()),
        ));
    }
    if let Some(((row, col), v)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite feature {v} at node {row}, column {col}"
        )));
    }
    for &(u, v) in edges {
        check_node(u, n)?;
        check_node(v, n)?;
    }
    let train_mask = mask_from_ids(train, n)?;
    let test_mask = mask_from_ids(test, n)?;
    if let Some(u) = (0..n).find(|&u| train_mask[u] && test_mask[u]) {
        return Err(Error::Mask(u));
    }
    let num_classes = labels.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    let (offsets, targets, dropped) = csr_from_pairs(n, edges.iter().copied());
    Ok(Built {
        graph: Graph {
            n,
            offsets,
            targets,
            features,
            labels,
            num_classes,
            train_mask,
            test_mask,
        },
        dropped_self_loops: dropped,
    })
}

fn check_node(u: usize, n: usize) -> Result<()> {
    if u >= n {
        Err(Error::Index { id: u, n })
    } else {
        Ok(())
    }
}

fn mask_from_ids(ids: &[usize], n: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &u in ids {
        check_node(u, n)?;
        mask[u] = true;
    }
    Ok(mask)
}

fn csr_from_pairs(
    n: usize,
    pairs: impl Iterator<Item = (usize, usize)>,
) -> (Vec<usize>, Vec<usize>, usize) {
    let mut dropped = 0;
    let mut both: Vec<(usize, usize)> = Vec::new();
    for (u, v) in pairs {
        if u == v {
            dropped += 1;
            continue;
        }
        both.push((u, v));
        both.push((v, u));
    }
    both.sort_unstable();
    both.dedup();
    let mut offsets = vec![0usize; n + 1];
    for &(u, _) in &both {
        offsets[u + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let targets = both.into_iter().map(|(_, v)| v).collect();
    (offsets, targets, dropped)
}

impl Graph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature_row(&self, u: usize) -> ArrayView1<'_, f64> {
        self.features.row(u)
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, u: usize) -> Option<usize> {
        self.labels[u]
    }

    pub fn is_train(&self, u: usize) -> bool {
        self.train_mask[u]
    }

    pub fn is_test(&self, u: usize) -> bool {
        self.test_mask[u]
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|&u| self.train_mask[u]).collect()
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|&u| self.test_mask[u]).collect()
    }

    pub fn check_node(&self, u: usize) -> Result<()> {
        check_node(u, self.n)
    }

    /// Copy with the given undirected edges removed. Missing edges are ignored;
    /// callers validate existence first.
    pub fn without_edges(&self, removed: &[(usize, usize)]) -> Graph {
        let mut drop: Vec<(usize, usize)> = removed
            .iter()
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        drop.sort_unstable();
        let kept = self
            .edges()
            .filter(|e| drop.binary_search(e).is_err())
            .collect::<Vec<_>>();
        self.with_topology(kept.into_iter())
    }

    /// Copy with extra undirected edges inserted (self-loops ignored).
    pub fn with_edges(&self, added: &[(usize, usize)]) -> Graph {
        let all = self.edges().chain(added.iter().copied()).collect::<Vec<_>>();
        self.with_topology(all.into_iter())
    }

    /// Copy where every edge incident to one of `nodes` is removed.
    pub fn with_isolated(&self, nodes: &[usize]) -> Graph {
        let mut hit = vec![false; self.n];
        for &u in nodes {
            hit[u] = true;
        }
        let kept = self
            .edges()
            .filter(|&(u, v)| !hit[u] && !hit[v])
            .collect::<Vec<_>>();
        self.with_topology(kept.into_iter())
    }

    pub fn with_zeroed_features(&self, nodes: &[usize]) -> Graph {
        let mut g = self.clone();
        for &u in nodes {
            g.features.row_mut(u).fill(0.0);
        }
        g
    }

    pub fn without_train(&self, nodes: &[usize]) -> Graph {
        let mut g = self.clone();
        for &u in nodes {
            g.train_mask[u] = false;
        }
        g
    }

    fn with_topology(&self, pairs: impl Iterator<Item = (usize, usize)>) -> Graph {
        let (offsets, targets, _) = csr_from_pairs(self.n, pairs);
        Graph {
            offsets,
            targets,
            ..self.clone()
        }
    }
}
