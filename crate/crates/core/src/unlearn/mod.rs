//! Deletion requests, graph surgery and entity-specific fine-tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

mod finetune;
mod loss;
mod partition;

pub use finetune::{finetune, retrain, EpochLog, FinetuneConfig, Finetuned};
pub use loss::{forgetting_loss, reasoning_loss, total_loss, LossBreakdown, LossTerm, LossWeights, KL_CLAMP};
pub use partition::{build_prototypes, AnchorSamples, EntityPartition, PrepareInputs, Prototypes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Feature,
    Node,
    Edge,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    pub kind: RequestKind,
    #[serde(default)]
    pub nodes: Vec<usize>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

impl UnlearnRequest {
    pub fn nodes(kind: RequestKind, nodes: Vec<usize>) -> Self {
        UnlearnRequest {
            kind,
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn edges(edges: Vec<(usize, usize)>) -> Self {
        UnlearnRequest {
            kind: RequestKind::Edge,
            nodes: Vec::new(),
            edges,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let req: UnlearnRequest =
            serde_json::from_str(text).map_err(|e| Error::Request(format!("malformed request: {e}")))?;
        req.check_fields()?;
        Ok(req)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    fn check_fields(&self) -> Result<()> {
        let (wanted, other) = match self.kind {
            RequestKind::Edge => (self.edges.len(), self.nodes.len()),
            _ => (self.nodes.len(), self.edges.len()),
        };
        if wanted == 0 {
            return Err(Error::Config(format!("{:?} request lists no entities", self.kind)));
        }
        if other != 0 {
            return Err(Error::Request(format!("{:?} request carries fields of another kind", self.kind)));
        }
        Ok(())
    }

    /// Checks the request against the graph it will be applied to.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        self.check_fields()?;
        match self.kind {
            RequestKind::Edge => {
                for &(u, v) in &self.edges {
                    graph.check_node(u)?;
                    graph.check_node(v)?;
                    if !graph.has_edge(u, v) {
                        return Err(Error::Request(format!("edge ({u}, {v}) is not in the graph")));
                    }
                }
            }
            RequestKind::Node | RequestKind::Feature => {
                for &u in &self.nodes {
                    graph.check_node(u)?;
                    if !graph.is_train(u) {
                        return Err(Error::Request(format!("node {u} is not in the training set")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Maps a request onto its unlearning entities (sorted, deduplicated):
/// identity for node and feature requests, edge endpoints for edge requests.
pub fn transform_request(req: &UnlearnRequest) -> Result<Vec<usize>> {
    req.check_fields()?;
    let mut nodes: Vec<usize> = match req.kind {
        RequestKind::Edge => req.edges.iter().flat_map(|&(u, v)| [u, v]).collect(),
        _ => req.nodes.clone(),
    };
    nodes.sort_unstable();
    nodes.dedup();
    Ok(nodes)
}

/// Produces the post-removal graph; node ids are preserved in every case.
pub fn apply_removal(graph: &Graph, req: &UnlearnRequest) -> Result<Graph> {
    req.validate(graph)?;
    Ok(match req.kind {
        RequestKind::Edge => graph.without_edges(&req.edges),
        RequestKind::Feature => graph.with_zeroed_features(&req.nodes),
        RequestKind::Node => graph
            .with_isolated(&req.nodes)
            .with_zeroed_features(&req.nodes)
            .without_train(&req.nodes),
    })
}

/// Draws, for each entity, a class uniformly among the classes other than its true one.
pub fn shuffle_labels(true_labels: &[usize], classes: usize, seed: u64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Config(format!("label shuffling needs at least 2 classes, got {classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    true_labels
        .iter()
        .map(|&c| {
            if c >= classes {
                return Err(Error::Data(format!("label {c} outside {classes} classes")));
            }
            let r = rng.random_range(0..classes - 1);
            Ok(if r >= c { r + 1 } else { r })
        })
        .collect()
}
