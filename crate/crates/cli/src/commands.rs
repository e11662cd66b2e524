use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gunlearn::datagen::{generate_sbm, SbmSpec};
use gunlearn::eval::{append_metrics, edge_attack_run, f1_score, AttackReport, MetricRecord};
use gunlearn::io::{read_dataset, write_dataset, DatasetPaths};
use gunlearn::model::{predict_labels, read_checkpoint, write_checkpoint, ModelParams};
use gunlearn::pipeline::{self, derive_seed, RunConfig};
use gunlearn::unlearn::{transform_request, UnlearnRequest};
use gunlearn::{Error, Graph, Result};

use crate::AttackKind;

pub const METRICS_FILE: &str = "metrics.jsonl";
const MODEL_FILE: &str = "model.guwt";
const UNLEARNED_FILE: &str = "unlearned.guwt";
const RETRAINED_FILE: &str = "retrained.guwt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed `{t}` in range `{s}`"));
        let (start, end) = if let Some((a, b)) = s.split_once("..=") {
            (parse(a)?, parse(b)?.checked_add(1).ok_or("seed range overflows")?)
        } else if let Some((a, b)) = s.split_once("..") {
            (parse(a)?, parse(b)?)
        } else {
            return Err(format!("expected `a..b` or `a..=b`, got `{s}`"));
        };
        if start >= end {
            return Err(format!("seed range `{s}` is empty"));
        }
        Ok(SeedRange { start, end })
    }
}

/// Resolved configuration, master seed and output directory of one run.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn load(config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let cfg = match config {
            Some(path) => RunConfig::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
            None => RunConfig::default(),
        };
        let seed = seed.unwrap_or(cfg.seed);
        let out = out
            .map(Path::to_path_buf)
            .or_else(|| cfg.paths.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { cfg, seed, out })
    }

    fn shard(&self, seed: u64) -> Context {
        Context {
            cfg: self.cfg.clone(),
            seed,
            out: self.out.join(format!("seed-{seed}")),
        }
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn dataset_paths(&self) -> DatasetPaths<PathBuf> {
        let p = &self.cfg.paths;
        let base = DatasetPaths::in_dir(&p.data.clone().unwrap_or_else(|| self.out.join("data")));
        DatasetPaths {
            edges: p.edges.clone().unwrap_or(base.edges),
            features: p.features.clone().unwrap_or(base.features),
            labels: p.labels.clone().unwrap_or(base.labels),
            train: p.train.clone().unwrap_or(base.train),
            test: p.test.clone().unwrap_or(base.test),
        }
    }

    fn graph(&self) -> Result<Graph> {
        Ok(read_dataset(&self.dataset_paths())?.graph)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.paths.checkpoint.clone().unwrap_or_else(|| self.out.join(MODEL_FILE))
    }

    fn run_id(&self, command: &str) -> String {
        format!("{command}-s{}", self.seed)
    }

    fn record(&self, command: &str, stage: &str, values: &[(&str, f64)]) -> Result<()> {
        let id = self.run_id(command);
        let records: Vec<MetricRecord> =
            values.iter().map(|&(m, v)| MetricRecord::new(&id, self.seed, stage, m, v)).collect();
        append_metrics(&self.out.join(METRICS_FILE), &records)
    }

    fn request(&self, graph: &Graph) -> Result<UnlearnRequest> {
        let req = match &self.cfg.paths.request {
            Some(path) => UnlearnRequest::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
            None => pipeline::random_request(
                graph,
                self.cfg.request.kind,
                self.cfg.request.fraction,
                derive_seed(self.seed, "request"),
            )?,
        };
        req.validate(graph)?;
        Ok(req)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn load_checkpoint(path: &Path, graph: &Graph) -> Result<ModelParams> {
    let params = read_checkpoint(path)?;
    if params.input_dim() != graph.feature_dim() || params.classes() != graph.num_classes() {
        return Err(Error::Checkpoint(format!(
            "{} expects {} features and {} classes, dataset has {} and {}",
            path.display(),
            params.input_dim(),
            params.classes(),
            graph.feature_dim(),
            graph.num_classes()
        )));
    }
    Ok(params)
}

/// Runs `step` once per seed, each in its own shard directory, then rewrites
/// `<out>/metrics.jsonl` as the concatenation of the shard files in seed order.
pub fn run_batch(ctx: &Context, range: SeedRange, step: &(dyn Fn(&Context) -> Result<()> + Sync)) -> Result<()> {
    let shards: Vec<Context> = (range.start..range.end).map(|s| ctx.shard(s)).collect();
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards.iter().map(|shard| scope.spawn(move || step(shard))).collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    ctx.ensure_out()?;
    let mut merged = String::new();
    for shard in &shards {
        let path = shard.out.join(METRICS_FILE);
        if path.exists() {
            merged.push_str(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?);
        }
    }
    write_file(&ctx.out.join(METRICS_FILE), merged)
}

pub fn cmd_gen(ctx: &Context) -> Result<()> {
    let spec = SbmSpec {
        seed: ctx.seed,
        ..ctx.cfg.data.clone()
    };
    let graph = generate_sbm(&spec)?;
    let paths = ctx.dataset_paths();
    for p in [&paths.edges, &paths.features, &paths.labels, &paths.train, &paths.test] {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    write_dataset(&paths, &graph)?;
    ctx.ensure_out()?;
    ctx.record(
        "gen",
        "gen",
        &[
            ("nodes", graph.n() as f64),
            ("edges", graph.num_edges() as f64),
            ("train_nodes", graph.train_nodes().len() as f64),
        ],
    )
}

pub fn cmd_train(ctx: &Context) -> Result<()> {
    let graph = ctx.graph()?;
    ctx.ensure_out()?;
    let model = pipeline::train_on(&graph, &ctx.cfg, ctx.seed)?;
    write_checkpoint(&ctx.out.join(MODEL_FILE), &model.params)?;
    let pred = predict_labels(&model.params, model.features.view())?;
    let train_f1 = f1_score(&pred, graph.labels(), &graph.train_nodes())?;
    let test_f1 = f1_score(&pred, graph.labels(), &graph.test_nodes())?;
    let mut values = vec![("train_f1", train_f1), ("test_f1", test_f1)];
    if let Some(&loss) = model.losses.last() {
        values.push(("final_loss", loss));
    }
    ctx.record("train", "train", &values)
}

/// Membership inference when the test pool can match the member count.
fn maybe_mia(ctx: &Context, params: &ModelParams, features: &ndarray::Array2<f64>, graph: &Graph, ue: &[usize]) -> Result<Option<AttackReport>> {
    let pool = ctx.cfg.eval.mia_pool.unwrap_or(usize::MAX).min(graph.test_nodes().len());
    if pool < ue.len() {
        return Ok(None);
    }
    pipeline::membership(params, features, graph, ue, &ctx.cfg, ctx.seed).map(Some)
}

pub fn cmd_unlearn(ctx: &Context) -> Result<()> {
    let graph = ctx.graph()?;
    let params = load_checkpoint(&ctx.checkpoint_path(), &graph)?;
    let request = ctx.request(&graph)?;
    ctx.ensure_out()?;
    let features = pipeline::propagated(&graph, &ctx.cfg)?;
    let outcome = pipeline::unlearn(&graph, &features, &params, &request, &ctx.cfg, ctx.seed)?;

    write_checkpoint(&ctx.out.join(UNLEARNED_FILE), &outcome.params)?;
    write_file(&ctx.out.join("request.json"), request.to_json() + "\n")?;
    let hie_csv = match &outcome.selection {
        Some(sel) => sel.to_csv(),
        None => std::iter::once("node,score,round\n".to_string())
            .chain(outcome.hie.iter().map(|v| format!("{v},,\n")))
            .collect(),
    };
    write_file(&ctx.out.join("hie.csv"), hie_csv)?;
    let log: String = outcome
        .finetuned
        .log
        .iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect();
    write_file(&ctx.out.join("unlearn_log.jsonl"), log)?;

    let original_f1 = pipeline::test_f1(&params, &features, &graph, &outcome.ue)?;
    let mut original = vec![("f1_non_ue", original_f1)];
    let mut unlearned = vec![
        ("f1_non_ue", outcome.f1_non_ue),
        ("ue", outcome.ue.len() as f64),
        ("hie", outcome.hie.len() as f64),
        ("rows_read", outcome.finetuned.rows_read as f64),
    ];
    if let Some(r) = maybe_mia(ctx, &params, &features, &graph, &outcome.ue)? {
        original.push(("mia_auc", r.auc));
    }
    if let Some(r) = maybe_mia(ctx, &outcome.params, &features, &graph, &outcome.ue)? {
        unlearned.push(("mia_auc", r.auc));
    }
    ctx.record("unlearn", "original", &original)?;
    ctx.record("unlearn", "unlearn", &unlearned)
}

pub fn cmd_retrain(ctx: &Context) -> Result<()> {
    let graph = ctx.graph()?;
    let request = ctx.request(&graph)?;
    ctx.ensure_out()?;
    let ue = transform_request(&request)?;
    let (after, model) = pipeline::retrain(&graph, &request, &ctx.cfg, ctx.seed)?;
    write_checkpoint(&ctx.out.join(RETRAINED_FILE), &model.params)?;
    let mut values = vec![("f1_non_ue", pipeline::test_f1(&model.params, &model.features, &after, &ue)?)];
    let before = pipeline::propagated(&graph, &ctx.cfg)?;
    if let Some(r) = maybe_mia(ctx, &model.params, &before, &graph, &ue)? {
        values.push(("mia_auc", r.auc));
    }
    ctx.record("retrain", "retrain", &values)
}

pub fn cmd_attack(ctx: &Context, kind: AttackKind) -> Result<()> {
    let graph = ctx.graph()?;
    ctx.ensure_out()?;
    if matches!(kind, AttackKind::Mia | AttackKind::All) {
        let request = ctx.request(&graph)?;
        let ue = transform_request(&request)?;
        let features = pipeline::propagated(&graph, &ctx.cfg)?;
        let candidates = [
            ("original", ctx.checkpoint_path()),
            ("unlearned", ctx.out.join(UNLEARNED_FILE)),
            ("retrained", ctx.out.join(RETRAINED_FILE)),
        ];
        let mut reports = BTreeMap::new();
        let mut values = Vec::new();
        for (name, path) in candidates {
            if !path.exists() {
                continue;
            }
            let params = load_checkpoint(&path, &graph)?;
            let report = pipeline::membership(&params, &features, &graph, &ue, &ctx.cfg, ctx.seed)?;
            values.push((name, report.auc));
            reports.insert(name, report);
        }
        if reports.is_empty() {
            return Err(Error::Checkpoint(format!("no checkpoint found in {}", ctx.out.display())));
        }
        write_file(&ctx.out.join("attack_mia.json"), to_json(&reports))?;
        let metric_names: Vec<String> = values.iter().map(|(n, _)| format!("mia_auc_{n}")).collect();
        let named: Vec<(&str, f64)> = metric_names.iter().map(String::as_str).zip(values.iter().map(|v| v.1)).collect();
        ctx.record("attack", "attack", &named)?;
    }
    if matches!(kind, AttackKind::Edge | AttackKind::All) {
        let mut reports = Vec::new();
        for &rho in &ctx.cfg.eval.rho {
            let r = edge_attack_run(&graph, rho, &ctx.cfg, ctx.seed)?;
            ctx.record(
                "attack",
                &format!("edge:{rho}"),
                &[("f1_clean", r.f1_clean), ("f1_poisoned", r.f1_poisoned), ("f1_unlearned", r.f1_unlearned)],
            )?;
            reports.push(r);
        }
        write_file(&ctx.out.join("attack_edge.json"), to_json(&reports))?;
    }
    Ok(())
}
