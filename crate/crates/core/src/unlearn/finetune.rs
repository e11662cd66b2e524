use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loss::{evaluate, LossWeights};
use super::partition::EntityPartition;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{init_model, train, Adam, Mode, ModelParams, TrainConfig, Trained};
use crate::par::Exec;
use crate::propagation::{normalized_adjacency, propagate_with, PropagationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub tau: f64,
    pub l2: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lambda: 0.8,
            epochs: 50,
            lr: 3e-4,
            tau: 0.5,
            l2: 5e-4,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 coefficient must be non-negative, got {}", self.l2)));
        }
        Ok(())
    }
}

/// Loss components at the start of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lf1: f64,
    pub lf2: f64,
    pub lf3: f64,
    pub lp: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct Finetuned {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub epoch_seconds: Vec<f64>,
    /// Feature rows read per epoch.
    pub rows_read: usize,
}

/// Fine-tunes `params` on the prepared partition with a fresh Adam state.
pub fn finetune(params: &ModelParams, partition: &EntityPartition, cfg: &FinetuneConfig) -> Result<Finetuned> {
    cfg.validate()?;
    let ws = partition.working()?;
    let weights = LossWeights::mixture(cfg.lambda);
    let mut params = params.clone();
    let mut opt = Adam::new(&params, cfg.lr, 0.0);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (b, grad) = evaluate(&params, ws, weights, cfg.tau, cfg.l2)?;
        if !b.total.is_finite() {
            return Err(Error::Data(format!("fine-tuning loss became {} at epoch {epoch}", b.total)));
        }
        if cfg.lr > 0.0 {
            opt.step(&mut params, &grad);
        }
        epoch_seconds.push(start.elapsed().as_secs_f64());
        log.push(EpochLog {
            epoch,
            lf1: b.lf1,
            lf2: b.lf2,
            lf3: b.lf3,
            lp: b.lp,
            total: b.total,
        });
    }
    Ok(Finetuned {
        params,
        log,
        epoch_seconds,
        rows_read: ws.ids.len(),
    })
}

/// Trains a fresh model on the post-removal graph. The architecture matches
/// `like`; the initialization is drawn from `train_cfg.seed`.
pub fn retrain(
    graph: &Graph,
    propagation: &PropagationConfig,
    like: &ModelParams,
    train_cfg: &TrainConfig,
    exec: Exec,
) -> Result<Trained> {
    let op = normalized_adjacency(graph, propagation.r);
    let x = propagate_with(&op, graph.features(), propagation, exec)?;
    let h = if like.mode == Mode::Mlp { like.hidden_dim() } else { 0 };
    let fresh = init_model(like.input_dim(), h, like.classes(), like.mode, train_cfg.seed)?;
    train(fresh, x.view(), graph.labels(), &graph.train_nodes(), train_cfg)
}
