//! Decoupled GNN head over precomputed propagated features.
//!
//! `mlp` mode: `emb = ReLU(X W_emb + b_emb)`, `logits = emb W_pre + b_pre`.
//! `linear` mode has no hidden layer; the embedding is the logit vector
//! itself so that embedding-level losses stay differentiable.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod checkpoint;
mod gradcheck;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, FD_STEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Linear,
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(cols),
        }
    }

    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (rows as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = Array2::from_shape_simple_fn((rows, cols), &mut draw);
        let bias = Array1::from_shape_simple_fn(cols, &mut draw);
        Layer { weight, bias }
    }

    fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Model parameters; the same shape doubles as a gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub mode: Mode,
    pub embed: Option<Layer>,
    pub predict: Layer,
}

pub fn init_model(f: usize, h: usize, classes: usize, mode: Mode, seed: u64) -> Result<ModelParams> {
    if f == 0 || classes == 0 || (mode == Mode::Mlp && h == 0) {
        return Err(Error::Config(format!(
            "model dimensions must be positive (f = {f}, h = {h}, classes = {classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match mode {
        Mode::Linear => ModelParams {
            mode,
            embed: None,
            predict: Layer::uniform(f, classes, &mut rng),
        },
        Mode::Mlp => {
            let embed = Layer::uniform(f, h, &mut rng);
            ModelParams {
                mode,
                embed: Some(embed),
                predict: Layer::uniform(h, classes, &mut rng),
            }
        }
    })
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        match &self.embed {
            Some(l) => l.weight.nrows(),
            None => self.predict.weight.nrows(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed.as_ref().map_or(0, |l| l.weight.ncols())
    }

    pub fn classes(&self) -> usize {
        self.predict.weight.ncols()
    }

    /// Width of the embedding space.
    pub fn embed_dim(&self) -> usize {
        match &self.embed {
            Some(l) => l.weight.ncols(),
            None => self.classes(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            mode: self.mode,
            embed: self.embed.as_ref().map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols())),
            predict: Layer::zeros(self.predict.weight.nrows(), self.predict.weight.ncols()),
        }
    }

    /// Parameter tensors in declaration order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(l) = &self.embed {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.predict.weight.as_slice().expect("standard layout"));
        out.push(self.predict.bias.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(l) = &mut self.embed {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.predict.weight.as_slice_mut().expect("standard layout"));
        out.push(self.predict.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Squared Frobenius norm of the weight matrices (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        let sq = |w: &Array2<f64>| w.iter().map(|v| v * v).sum::<f64>();
        self.embed.as_ref().map_or(0.0, |l| sq(&l.weight)) + sq(&self.predict.weight)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} input columns", self.input_dim()), x.ncols()));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Hidden pre-activations (mlp mode only).
    pub pre: Option<Array2<f64>>,
    pub emb: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn forward(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Forward> {
    params.check_input(x)?;
    Ok(match &params.embed {
        Some(embed) => {
            let pre = embed.affine(x);
            let emb = pre.mapv(|v| v.max(0.0));
            let logits = params.predict.affine(emb.view());
            let probs = softmax_rows(logits.view());
            Forward {
                pre: Some(pre),
                emb,
                logits,
                probs,
            }
        }
        None => {
            let logits = params.predict.affine(x);
            let probs = softmax_rows(logits.view());
            Forward {
                pre: None,
                emb: logits.clone(),
                logits,
                probs,
            }
        }
    })
}

pub fn forward_embed(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    params.check_input(x)?;
    Ok(match &params.embed {
        Some(embed) => embed.affine(x).mapv(|v| v.max(0.0)),
        None => params.predict.affine(x),
    })
}

pub fn forward_predict(params: &ModelParams, emb: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if emb.ncols() != params.embed_dim() {
        return Err(Error::shape(format!("{} embedding columns", params.embed_dim()), emb.ncols()));
    }
    Ok(match params.mode {
        Mode::Mlp => softmax_rows(params.predict.affine(emb).view()),
        Mode::Linear => softmax_rows(emb),
    })
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

pub fn predict_labels(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    Ok(forward(params, x)?.probs.rows().into_iter().map(|r| argmax(r.iter())).collect())
}

pub(crate) fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Backpropagates gradients w.r.t. logits and (optionally) embeddings
/// of the rows in `x` down to every parameter.
pub fn backward(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    fwd: &Forward,
    d_logits: &Array2<f64>,
    d_emb: Option<&Array2<f64>>,
) -> ModelParams {
    match &params.embed {
        Some(_) => {
            let d_w2 = fwd.emb.t().dot(d_logits);
            let d_b2 = d_logits.sum_axis(Axis(0));
            let mut d_h = d_logits.dot(&params.predict.weight.t());
            if let Some(d) = d_emb {
                d_h += d;
            }
            let pre = fwd.pre.as_ref().expect("mlp forward keeps pre-activations");
            ndarray::Zip::from(&mut d_h).and(pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            ModelParams {
                mode: params.mode,
                embed: Some(Layer {
                    weight: x.t().dot(&d_h),
                    bias: d_h.sum_axis(Axis(0)),
                }),
                predict: Layer {
                    weight: d_w2,
                    bias: d_b2,
                },
            }
        }
        None => {
            let mut d = d_logits.clone();
            if let Some(e) = d_emb {
                d += e;
            }
            ModelParams {
                mode: params.mode,
                embed: None,
                predict: Layer {
                    weight: x.t().dot(&d),
                    bias: d.sum_axis(Axis(0)),
                },
            }
        }
    }
}

/// A differentiable scalar objective of the model parameters.
pub trait Objective {
    fn value_and_grad(&self, params: &ModelParams) -> Result<(f64, ModelParams)>;

    fn value(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.value_and_grad(params)?.0)
    }
}

/// Mean cross-entropy of the given rows against integer targets.
pub struct CrossEntropy<'a> {
    pub features: ArrayView2<'a, f64>,
    pub targets: &'a [usize],
}

impl Objective for CrossEntropy<'_> {
    fn value_and_grad(&self, params: &ModelParams) -> Result<(f64, ModelParams)> {
        let fwd = forward(params, self.features)?;
        let (loss, d_logits) = cross_entropy(&fwd.probs, self.targets, 1.0 / self.targets.len().max(1) as f64);
        Ok((loss, backward(params, self.features, &fwd, &d_logits, None)))
    }
}

/// `scale · Σ_i −log p_i[target_i]` and its gradient w.r.t. the logits.
pub(crate) fn cross_entropy(probs: &Array2<f64>, targets: &[usize], scale: f64) -> (f64, Array2<f64>) {
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(f64::MIN_POSITIVE).ln();
        grad[[i, t]] -= 1.0;
    }
    grad *= scale;
    (scale * loss, grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} and weight decay {} must be non-negative",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Adam with coupled L2 weight decay and the usual moment coefficients.
pub struct Adam {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: ModelParams,
    v: ModelParams,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let tensors = params
            .slices_mut()
            .into_iter()
            .zip(grad.slices())
            .zip(self.m.slices_mut().into_iter().zip(self.v.slices_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub params: ModelParams,
    pub losses: Vec<f64>,
}

/// Full-batch cross-entropy training on the labeled rows of `train`.
pub fn train(
    params: ModelParams,
    features: ArrayView2<'_, f64>,
    labels: &[Option<usize>],
    train_nodes: &[usize],
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    params.check_input(features)?;
    let targets = train_nodes
        .iter()
        .map(|&u| {
            labels
                .get(u)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Data(format!("training node {u} has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(&c) = targets.iter().find(|&&c| c >= params.classes()) {
        return Err(Error::Data(format!("label {c} outside the model's {} classes", params.classes())));
    }
    let x = features.select(Axis(0), train_nodes);
    let objective = CrossEntropy {
        features: x.view(),
        targets: &targets,
    };
    let mut params = params;
    let mut opt = Adam::new(&params, cfg.lr, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = objective.value_and_grad(&params)?;
        if !loss.is_finite() {
            return Err(Error::Data(format!("training loss became {loss}")));
        }
        losses.push(loss);
        opt.step(&mut params, &grad);
    }
    Ok(Trained { params, losses })
}
