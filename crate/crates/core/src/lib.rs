//! Graph unlearning for decoupled GNNs.
//!
//! A trained model over precomputed propagated features is edited so that a
//! deletion request (nodes, edges or feature rows) stops influencing it:
//! the request is mapped onto unlearning entities, the nodes they influence
//! most are selected by greedy influence maximization over the propagation
//! operator, and the model is fine-tuned on those entities only.

pub mod error;
pub mod eval;
pub mod graph;
pub mod datagen;
pub mod io;
pub mod model;
pub mod nim;
pub mod par;
pub mod pipeline;
pub mod propagation;
pub mod unlearn;

pub use error::{Error, Result};
pub use graph::{build_graph, Graph};
pub use par::Exec;
pub use propagation::{
    normalized_adjacency, propagate, propagate_with, propagation_column, propagation_columns,
    PropagationConfig, Scheme, SparseOperator,
};
