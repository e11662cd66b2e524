//! Fine-tuning objectives over a prepared partition.
//!
//! * `lf1`: cross-entropy of UE predictions against their shuffled labels
//! * `lf2`: Euclidean distance from each UE embedding to the prototype of its
//!   shuffled class
//! * `lf3`: contrastive log-ratio per HIE anchor, similarity `cos / τ`
//! * `lp`: `l2 · ‖W‖²` plus `KL(Ỹ ‖ Ŷ)` over HIE against the cached memory
//!
//! The mixed objective is `λ (lf1 + lf2 + lf3) + (1 − λ) lp`.

use ndarray::{Array1, Array2, ArrayView1};

use super::partition::{EntityPartition, WorkingSet};
use crate::error::{Error, Result};
use crate::model::{backward, forward, Forward, ModelParams, Objective};

/// Lower clamp on predicted probabilities inside the KL log-ratio.
pub const KL_CLAMP: f64 = 1e-12;

const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lf1: f64,
    pub lf2: f64,
    pub lf3: f64,
    pub lp: f64,
}

impl LossWeights {
    pub fn forgetting() -> Self {
        LossWeights { lf1: 1.0, lf2: 1.0, lf3: 1.0, lp: 0.0 }
    }

    pub fn reasoning() -> Self {
        LossWeights { lf1: 0.0, lf2: 0.0, lf3: 0.0, lp: 1.0 }
    }

    pub fn mixture(lambda: f64) -> Self {
        LossWeights { lf1: lambda, lf2: lambda, lf3: lambda, lp: 1.0 - lambda }
    }
}

/// Per-component values plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct LossBreakdown {
    pub lf1: f64,
    pub lf2: f64,
    pub lf3: f64,
    pub lp: f64,
    pub total: f64,
}

/// Evaluates every component and the gradient of their weighted sum.
pub(crate) fn evaluate(
    params: &ModelParams,
    ws: &WorkingSet,
    weights: LossWeights,
    tau: f64,
    l2: f64,
) -> Result<(LossBreakdown, ModelParams)> {
    let fwd = forward(params, ws.x.view())?;
    let mut d_logits = Array2::zeros(fwd.logits.raw_dim());
    let mut d_emb = Array2::zeros(fwd.emb.raw_dim());

    let lf1 = label_forgetting(&fwd, ws, weights.lf1, &mut d_logits);
    let lf2 = prototype_forgetting(&fwd, ws, weights.lf2, &mut d_emb);
    let lf3 = contrastive_forgetting(&fwd, ws, tau, weights.lf3, &mut d_emb);
    let kl = memory_kl(&fwd, ws, weights.lp, &mut d_logits);
    let lp = l2 * params.weight_norm_sq() + kl;

    let mut grad = backward(params, ws.x.view(), &fwd, &d_logits, Some(&d_emb));
    if weights.lp != 0.0 && l2 != 0.0 {
        let scale = 2.0 * l2 * weights.lp;
        if let (Some(g), Some(p)) = (grad.embed.as_mut(), params.embed.as_ref()) {
            g.weight.scaled_add(scale, &p.weight);
        }
        grad.predict.weight.scaled_add(scale, &params.predict.weight);
    }
    let total = weights.lf1 * lf1 + weights.lf2 * lf2 + weights.lf3 * lf3 + weights.lp * lp;
    Ok((LossBreakdown { lf1, lf2, lf3, lp, total }, grad))
}

fn label_forgetting(fwd: &Forward, ws: &WorkingSet, weight: f64, d_logits: &mut Array2<f64>) -> f64 {
    let mut loss = 0.0;
    for (i, &t) in ws.ue_targets.iter().enumerate() {
        let p = fwd.probs.row(i);
        loss -= p[t].max(f64::MIN_POSITIVE).ln();
        if weight != 0.0 {
            let mut g = d_logits.row_mut(i);
            g.scaled_add(weight, &p);
            g[t] -= weight;
        }
    }
    loss
}

fn prototype_forgetting(fwd: &Forward, ws: &WorkingSet, weight: f64, d_emb: &mut Array2<f64>) -> f64 {
    let mut loss = 0.0;
    for i in 0..ws.ue_targets.len() {
        let diff = &fwd.emb.row(i) - &ws.ue_prototypes.row(i);
        let dist = diff.dot(&diff).sqrt();
        loss += dist;
        if weight != 0.0 && dist > 0.0 {
            d_emb.row_mut(i).scaled_add(weight / dist, &diff);
        }
    }
    loss
}

/// Cosine similarity and its gradients w.r.t. both arguments.
fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na < NORM_EPS || nb < NORM_EPS {
        return (0.0, Array1::zeros(a.len()), Array1::zeros(b.len()));
    }
    let c = a.dot(&b) / (na * nb);
    let ga = &b / (na * nb) - &a * (c / (na * na));
    let gb = &a / (na * nb) - &b * (c / (nb * nb));
    (c, ga, gb)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn contrastive_forgetting(fwd: &Forward, ws: &WorkingSet, tau: f64, weight: f64, d_emb: &mut Array2<f64>) -> f64 {
    let mut loss = 0.0;
    for (anchor, pos, neg) in &ws.anchors {
        if pos.is_empty() {
            continue;
        }
        let h = fwd.emb.row(*anchor);
        let sims: Vec<(usize, bool, f64, Array1<f64>, Array1<f64>)> = pos
            .iter()
            .map(|&j| (j, true))
            .chain(neg.iter().map(|&j| (j, false)))
            .map(|(j, is_pos)| {
                let (c, ga, gb) = cosine(h, fwd.emb.row(j));
                (j, is_pos, c / tau, ga, gb)
            })
            .collect();
        let lse_pos = log_sum_exp(sims.iter().filter(|s| s.1).map(|s| s.2));
        let lse_all = log_sum_exp(sims.iter().map(|s| s.2));
        loss += lse_all - lse_pos;
        if weight == 0.0 {
            continue;
        }
        for (j, is_pos, s, ga, gb) in &sims {
            let mut coef = (s - lse_all).exp();
            if *is_pos {
                coef -= (s - lse_pos).exp();
            }
            let scale = weight * coef / tau;
            d_emb.row_mut(*anchor).scaled_add(scale, ga);
            d_emb.row_mut(*j).scaled_add(scale, gb);
        }
    }
    loss
}

fn memory_kl(fwd: &Forward, ws: &WorkingSet, weight: f64, d_logits: &mut Array2<f64>) -> f64 {
    let mut loss = 0.0;
    for (k, &row) in ws.hie_rows.iter().enumerate() {
        let target = ws.memory.row(k);
        let p = fwd.probs.row(row);
        let mut kept_mass = 0.0;
        for (&t, &q) in target.iter().zip(p.iter()) {
            if t > 0.0 {
                loss += t * (t.ln() - q.max(KL_CLAMP).ln());
            }
            if q >= KL_CLAMP {
                kept_mass += t;
            }
        }
        if weight != 0.0 {
            let mut g = d_logits.row_mut(row);
            for c in 0..p.len() {
                let own = if p[c] >= KL_CLAMP { target[c] } else { 0.0 };
                g[c] += weight * (p[c] * kept_mass - own);
            }
        }
    }
    loss
}

fn prepared(partition: &EntityPartition) -> Result<&WorkingSet> {
    if partition.shuffled.is_none() || partition.prototypes.is_none() || partition.memory.is_none() {
        return Err(Error::State("partition caches missing".into()));
    }
    partition.working()
}

/// `lf1 + lf2 + lf3` with its gradient; the breakdown reports each part.
pub fn forgetting_loss(params: &ModelParams, partition: &EntityPartition, tau: f64) -> Result<(LossBreakdown, ModelParams)> {
    evaluate(params, prepared(partition)?, LossWeights::forgetting(), tau, 0.0)
}

pub fn reasoning_loss(params: &ModelParams, partition: &EntityPartition, l2: f64) -> Result<(LossBreakdown, ModelParams)> {
    evaluate(params, prepared(partition)?, LossWeights::reasoning(), 1.0, l2)
}

pub fn total_loss(
    params: &ModelParams,
    partition: &EntityPartition,
    lambda: f64,
    tau: f64,
    l2: f64,
) -> Result<(LossBreakdown, ModelParams)> {
    evaluate(params, prepared(partition)?, LossWeights::mixture(lambda), tau, l2)
}

/// A single weighted combination of the fine-tuning losses, usable with
/// [`crate::model::grad_check`].
pub struct LossTerm<'a> {
    pub partition: &'a EntityPartition,
    pub weights: LossWeights,
    pub tau: f64,
    pub l2: f64,
}

impl Objective for LossTerm<'_> {
    fn value_and_grad(&self, params: &ModelParams) -> Result<(f64, ModelParams)> {
        let (b, g) = evaluate(params, prepared(self.partition)?, self.weights, self.tau, self.l2)?;
        Ok((b.total, g))
    }
}
