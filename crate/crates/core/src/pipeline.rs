//! Run configuration and the train → unlearn → evaluate pipeline shared by
//! the command-line tool and the experiment harness.

use std::path::PathBuf;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::datagen::SbmSpec;
use crate::error::{Error, Result};
use crate::eval::{f1_score, mia_attack, AttackReport};
use crate::graph::Graph;
use crate::model::{init_model, predict_labels, train, Mode, ModelParams, TrainConfig};
use crate::nim::{khop_hie, select_hie, HieSelection, SeedMode};
use crate::par::Exec;
use crate::propagation::{normalized_adjacency, propagate_with, PropagationConfig, Scheme};
use crate::unlearn::{
    apply_removal, finetune, transform_request, EntityPartition, FinetuneConfig, Finetuned, PrepareInputs,
    RequestKind, UnlearnRequest,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding `edges.tsv`, `features.gufm`, `labels.tsv`,
    /// `train.txt` and `test.txt`.
    pub data: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub request: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationSection {
    pub scheme: Scheme,
    pub k: usize,
    pub r: f64,
    pub beta: f64,
    /// Used by the `custom` scheme only.
    pub weights: Vec<f64>,
}

impl Default for PropagationSection {
    fn default() -> Self {
        PropagationSection {
            scheme: Scheme::Gbp,
            k: 3,
            r: 0.5,
            beta: 0.5,
            weights: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mode: Mode,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            mode: Mode::Mlp,
            hidden: 128,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Nim,
    Khop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NimSection {
    pub selector: Selector,
    pub theta: f64,
    /// Absolute budget; overrides `budget_multiplier` when set.
    pub budget: Option<usize>,
    pub budget_multiplier: f64,
    pub mode: SeedMode,
    /// Neighborhood radius of the k-hop selector.
    pub hops: usize,
}

impl Default for NimSection {
    fn default() -> Self {
        NimSection {
            selector: Selector::Nim,
            theta: 0.5,
            budget: None,
            budget_multiplier: 3.0,
            mode: SeedMode::Expanding,
            hops: 2,
        }
    }
}

impl NimSection {
    pub fn budget_for(&self, ue: usize) -> usize {
        self.budget.unwrap_or((self.budget_multiplier * ue as f64).round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnSection {
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub tau: f64,
    pub l2: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        UnlearnSection {
            lambda: f.lambda,
            epochs: f.epochs,
            lr: f.lr,
            tau: f.tau,
            l2: f.l2,
            positives: 5,
            negatives: 5,
        }
    }
}

/// How a request is drawn when no request file is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestSection {
    pub kind: RequestKind,
    /// Fraction of training nodes (node, feature) or of training edges (edge).
    pub fraction: f64,
}

impl Default for RequestSection {
    fn default() -> Self {
        RequestSection {
            kind: RequestKind::Node,
            fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Cap on the non-member candidate pool; all test nodes when unset.
    pub mia_pool: Option<usize>,
    pub rho: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            mia_pool: None,
            rho: vec![0.1, 0.2, 0.3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub data: SbmSpec,
    pub propagation: PropagationSection,
    pub model: ModelSection,
    pub nim: NimSection,
    pub unlearn: UnlearnSection,
    pub request: RequestSection,
    pub eval: EvalSection,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: PathsConfig::default(),
            data: SbmSpec::default(),
            propagation: PropagationSection::default(),
            model: ModelSection::default(),
            nim: NimSection::default(),
            unlearn: UnlearnSection::default(),
            request: RequestSection::default(),
            eval: EvalSection::default(),
            seed: 0,
            parallel: true,
        }
    }
}

/// Turns `{"a.b": 1}` into `{"a": {"b": 1}}`, recursively.
fn expand_dotted(value: Value) -> Result<Value> {
    let Value::Object(map) = value else { return Ok(value) };
    let mut out = Map::new();
    for (key, v) in map {
        let v = expand_dotted(v)?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("split yields one part");
        let mut slot = &mut out;
        for p in parts {
            let entry = slot.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            slot = entry
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("key `{key}` conflicts with a scalar at `{p}`")))?;
        }
        match (slot.get_mut(last), v) {
            (Some(Value::Object(existing)), Value::Object(new)) => existing.extend(new),
            (Some(_), _) => return Err(Error::Config(format!("key `{key}` given twice"))),
            (None, v) => {
                slot.insert(last.to_string(), v);
            }
        }
    }
    Ok(Value::Object(out))
}

impl RunConfig {
    /// Parses a JSON document with nested objects and/or flat dotted keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not JSON: {e}")))?;
        let cfg: RunConfig =
            serde_json::from_value(expand_dotted(value)?).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.propagation()?;
        self.train_config(0).validate()?;
        self.finetune_config().validate()?;
        let nim = &self.nim;
        if !(nim.theta >= 0.0) {
            return Err(Error::Config(format!("nim.theta must be non-negative, got {}", nim.theta)));
        }
        if !(nim.budget_multiplier >= 0.0 && nim.budget_multiplier.is_finite()) {
            return Err(Error::Config(format!("nim.budget_multiplier must be non-negative, got {}", nim.budget_multiplier)));
        }
        if nim.hops == 0 {
            return Err(Error::Config("nim.hops must be at least 1".into()));
        }
        if self.model.mode == Mode::Mlp && self.model.hidden == 0 {
            return Err(Error::Config("model.hidden must be positive for the mlp mode".into()));
        }
        if !(self.request.fraction > 0.0 && self.request.fraction <= 1.0) {
            return Err(Error::Config(format!("request.fraction must lie in (0, 1], got {}", self.request.fraction)));
        }
        if let Some(&rho) = self.eval.rho.iter().find(|&&r| !(r > 0.0 && r <= 0.5)) {
            return Err(Error::Config(format!("eval.rho values must lie in (0, 0.5], got {rho}")));
        }
        Ok(())
    }

    pub fn propagation(&self) -> Result<PropagationConfig> {
        let p = &self.propagation;
        match p.scheme {
            Scheme::Sgc => PropagationConfig::sgc(p.k, p.r),
            Scheme::S2gc => PropagationConfig::s2gc(p.k, p.r),
            Scheme::Gbp => PropagationConfig::gbp(p.k, p.r, p.beta),
            Scheme::Custom => PropagationConfig::custom(p.r, p.weights.clone()),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.model.lr,
            weight_decay: self.model.weight_decay,
            epochs: self.model.epochs,
            seed,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let u = &self.unlearn;
        FinetuneConfig {
            lambda: u.lambda,
            epochs: u.epochs,
            lr: u.lr,
            tau: u.tau,
            l2: u.l2,
        }
    }
}

/// Independent sub-seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then a splitmix64 finalizer
    let tag = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    let mut z = (seed ^ tag).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Propagated features of `graph` under the configured scheme.
pub fn propagated(graph: &Graph, cfg: &RunConfig) -> Result<Array2<f64>> {
    let p = cfg.propagation()?;
    propagate_with(&normalized_adjacency(graph, p.r), graph.features(), &p, cfg.exec())
}

pub fn init_params(graph: &Graph, cfg: &RunConfig, seed: u64) -> Result<ModelParams> {
    let hidden = if cfg.model.mode == Mode::Mlp { cfg.model.hidden } else { 0 };
    init_model(graph.feature_dim(), hidden, graph.num_classes(), cfg.model.mode, derive_seed(seed, "init"))
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub features: Array2<f64>,
    pub losses: Vec<f64>,
}

/// Propagates and trains from the seeded initialization.
pub fn train_on(graph: &Graph, cfg: &RunConfig, seed: u64) -> Result<TrainedModel> {
    let features = propagated(graph, cfg)?;
    let init = init_params(graph, cfg, seed)?;
    let t = train(init, features.view(), graph.labels(), &graph.train_nodes(), &cfg.train_config(seed))?;
    Ok(TrainedModel {
        params: t.params,
        features,
        losses: t.losses,
    })
}

/// Labels of the training nodes only.
pub fn train_labels(graph: &Graph) -> Vec<Option<usize>> {
    (0..graph.n()).map(|v| if graph.is_train(v) { graph.label(v) } else { None }).collect()
}

/// Draws a request covering `fraction` of the training nodes, or of the
/// edges joining two training nodes. At least one entity is drawn.
pub fn random_request(graph: &Graph, kind: RequestKind, fraction: f64, seed: u64) -> Result<UnlearnRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |pool_len: usize| -> Result<Vec<usize>> {
        if pool_len == 0 {
            return Err(Error::Data(format!("no {kind:?} entities to draw a request from")));
        }
        let count = ((fraction * pool_len as f64).round() as usize).clamp(1, pool_len);
        let mut idx = sample(&mut rng, pool_len, count).into_vec();
        idx.sort_unstable();
        Ok(idx)
    };
    Ok(match kind {
        RequestKind::Edge => {
            let pool: Vec<(usize, usize)> = graph.edges().filter(|&(u, v)| graph.is_train(u) && graph.is_train(v)).collect();
            UnlearnRequest::edges(pick(pool.len())?.into_iter().map(|i| pool[i]).collect())
        }
        _ => {
            let pool = graph.train_nodes();
            UnlearnRequest::nodes(kind, pick(pool.len())?.into_iter().map(|i| pool[i]).collect())
        }
    })
}

#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub params: ModelParams,
    /// Post-removal graph and its propagated features.
    pub graph: Graph,
    pub features: Array2<f64>,
    pub ue: Vec<usize>,
    pub hie: Vec<usize>,
    /// Present when the influence selector ran.
    pub selection: Option<HieSelection>,
    pub finetuned: Finetuned,
    /// Test-node F1 of the unlearned model on the post-removal graph.
    pub f1_non_ue: f64,
}

/// Selects HIE for `ue` on the pre-removal graph.
pub fn select_entities(
    graph: &Graph,
    features: &Array2<f64>,
    params: &ModelParams,
    ue: &[usize],
    cfg: &RunConfig,
) -> Result<(Vec<usize>, Option<HieSelection>)> {
    match cfg.nim.selector {
        Selector::Khop => Ok((khop_hie(graph, ue, cfg.nim.hops)?, None)),
        Selector::Nim => {
            let p = cfg.propagation()?;
            let op = normalized_adjacency(graph, p.r);
            let soft = crate::model::forward(params, features.view())?.probs;
            let sel = select_hie(
                &op,
                &p,
                ue,
                soft.view(),
                cfg.nim.theta,
                cfg.nim.budget_for(ue.len()),
                cfg.nim.mode,
                cfg.exec(),
            )?;
            Ok((sel.nodes(), Some(sel)))
        }
    }
}

/// Removal, HIE selection, cache preparation and fine-tuning of `params`,
/// which was trained on `graph` with propagated `features`.
pub fn unlearn(
    graph: &Graph,
    features: &Array2<f64>,
    params: &ModelParams,
    request: &UnlearnRequest,
    cfg: &RunConfig,
    seed: u64,
) -> Result<UnlearnOutcome> {
    let after = apply_removal(graph, request)?;
    let ue = transform_request(request)?;
    let after_features = propagated(&after, cfg)?;
    let (hie, selection) = select_entities(graph, features, params, &ue, cfg)?;

    let labels = train_labels(graph);
    let mut partition = EntityPartition::new(graph.n(), &ue, &hie)?;
    partition.prepare(&PrepareInputs {
        original: params,
        forget_features: features.view(),
        retain_features: after_features.view(),
        train_labels: &labels,
        classes: params.classes(),
        positives: cfg.unlearn.positives,
        negatives: cfg.unlearn.negatives,
        seed: derive_seed(seed, "partition"),
    })?;
    let finetuned = finetune(params, &partition, &cfg.finetune_config())?;
    let f1_non_ue = test_f1(&finetuned.params, &after_features, &after, &ue)?;
    Ok(UnlearnOutcome {
        params: finetuned.params.clone(),
        graph: after,
        features: after_features,
        ue,
        hie,
        selection,
        finetuned,
        f1_non_ue,
    })
}

/// F1 over test nodes outside `ue`.
pub fn test_f1(params: &ModelParams, features: &Array2<f64>, graph: &Graph, ue: &[usize]) -> Result<f64> {
    let mask: Vec<usize> = graph.test_nodes().into_iter().filter(|v| ue.binary_search(v).is_err()).collect();
    f1_score(&predict_labels(params, features.view())?, graph.labels(), &mask)
}

/// Membership inference of `ue` against the test nodes, probing with the
/// pre-removal propagated features.
pub fn membership(params: &ModelParams, features: &Array2<f64>, graph: &Graph, ue: &[usize], cfg: &RunConfig, seed: u64) -> Result<AttackReport> {
    let mut pool = graph.test_nodes();
    if let Some(cap) = cfg.eval.mia_pool.filter(|&c| c < pool.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mia-pool"));
        let mut idx = sample(&mut rng, pool.len(), cap).into_vec();
        idx.sort_unstable();
        pool = idx.into_iter().map(|i| pool[i]).collect();
    }
    mia_attack(params, features.view(), ue, &pool, derive_seed(seed, "mia"))
}

/// Trains a fresh model on the post-removal graph.
pub fn retrain(graph: &Graph, request: &UnlearnRequest, cfg: &RunConfig, seed: u64) -> Result<(Graph, TrainedModel)> {
    let after = apply_removal(graph, request)?;
    let model = train_on(&after, cfg, seed)?;
    Ok((after, model))
}
