use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::shuffle_labels;
use crate::error::{Error, Result};
use crate::model::{argmax, forward, ModelParams};

/// Class prototypes: mean embedding of the exemplars of each class.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub vectors: Array2<f64>,
    pub present: Vec<bool>,
}

impl Prototypes {
    pub fn get(&self, class: usize) -> Result<ndarray::ArrayView1<'_, f64>> {
        if class < self.present.len() && self.present[class] {
            Ok(self.vectors.row(class))
        } else {
            Err(Error::Prototype(class))
        }
    }
}

/// Averages `embeddings` rows per class. Rows with `None` labels are skipped.
pub fn build_prototypes(embeddings: ArrayView2<'_, f64>, labels: &[Option<usize>], classes: usize) -> Result<Prototypes> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::shape(format!("{} labels", embeddings.nrows()), labels.len()));
    }
    let mut vectors = Array2::zeros((classes, embeddings.ncols()));
    let mut counts = vec![0usize; classes];
    for (row, label) in embeddings.rows().into_iter().zip(labels) {
        if let Some(c) = *label {
            if c >= classes {
                return Err(Error::Data(format!("label {c} outside {classes} classes")));
            }
            let mut acc = vectors.row_mut(c);
            acc += &row;
            counts[c] += 1;
        }
    }
    for (c, mut row) in vectors.rows_mut().into_iter().enumerate() {
        if counts[c] > 0 {
            row /= counts[c] as f64;
        }
    }
    Ok(Prototypes {
        vectors,
        present: counts.iter().map(|&k| k > 0).collect(),
    })
}

/// Contrastive samples of one high-influence anchor, as node ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorSamples {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Everything the partition caches before fine-tuning starts.
pub struct PrepareInputs<'a> {
    /// Model before unlearning.
    pub original: &'a ModelParams,
    /// Propagated features the original model was trained on; only the rows
    /// of the unlearning entities are read.
    pub forget_features: ArrayView2<'a, f64>,
    /// Propagated features of the post-removal graph.
    pub retain_features: ArrayView2<'a, f64>,
    /// Labels of the original training nodes; `None` elsewhere.
    pub train_labels: &'a [Option<usize>],
    pub classes: usize,
    pub positives: usize,
    pub negatives: usize,
    pub seed: u64,
}

/// Compact row block read by every fine-tuning step.
#[derive(Clone, Debug)]
pub(crate) struct WorkingSet {
    pub x: Array2<f64>,
    /// Node id of every row. The first `ue` rows hold the unlearning
    /// entities (forget features); the rest come from the post-removal graph.
    pub ids: Vec<usize>,
    pub ue_targets: Vec<usize>,
    pub ue_prototypes: Array2<f64>,
    pub anchors: Vec<(usize, Vec<usize>, Vec<usize>)>,
    pub hie_rows: Vec<usize>,
    pub memory: Array2<f64>,
}

/// UE / HIE / remaining-node split and the one-time caches built from it.
#[derive(Clone, Debug)]
pub struct EntityPartition {
    pub ue: Vec<usize>,
    pub hie: Vec<usize>,
    pub rest: Vec<usize>,
    /// Target class per UE node (aligned with `ue`).
    pub shuffled: Option<Vec<usize>>,
    pub prototypes: Option<Prototypes>,
    /// One entry per HIE node (aligned with `hie`).
    pub samples: Option<Vec<AnchorSamples>>,
    /// Original-model soft labels of the HIE nodes (aligned with `hie`).
    pub memory: Option<Array2<f64>>,
    pub(crate) working: Option<WorkingSet>,
}

impl EntityPartition {
    pub fn new(n: usize, ue: &[usize], hie: &[usize]) -> Result<Self> {
        let mut role = vec![0u8; n];
        for (&u, tag) in ue.iter().map(|u| (u, 1)).chain(hie.iter().map(|u| (u, 2))) {
            if u >= n {
                return Err(Error::Index { id: u, n });
            }
            if role[u] != 0 {
                return Err(Error::Config(format!("node {u} listed twice across UE and HIE")));
            }
            role[u] = tag;
        }
        let pick = |tag| (0..n).filter(|&v| role[v] == tag).collect::<Vec<_>>();
        Ok(EntityPartition {
            ue: pick(1),
            hie: pick(2),
            rest: pick(0),
            shuffled: None,
            prototypes: None,
            samples: None,
            memory: None,
            working: None,
        })
    }

    pub fn n(&self) -> usize {
        self.ue.len() + self.hie.len() + self.rest.len()
    }

    pub fn is_prepared(&self) -> bool {
        self.working.is_some()
    }

    /// Node ids whose feature rows fine-tuning reads.
    pub fn working_ids(&self) -> Result<&[usize]> {
        Ok(&self.working()?.ids)
    }

    pub(crate) fn working(&self) -> Result<&WorkingSet> {
        self.working
            .as_ref()
            .ok_or_else(|| Error::State("partition caches not prepared; call prepare() first".into()))
    }

    /// Builds every cache: shuffled UE labels, class prototypes over non-UE
    /// nodes, contrastive samples per HIE anchor, the HIE memory and the
    /// compact working set.
    pub fn prepare(&mut self, inp: &PrepareInputs<'_>) -> Result<()> {
        let n = self.n();
        for (what, m) in [("forget", inp.forget_features), ("retain", inp.retain_features)] {
            if m.nrows() != n {
                return Err(Error::shape(format!("{n} {what} feature rows"), m.nrows()));
            }
        }
        if inp.train_labels.len() != n {
            return Err(Error::shape(format!("{n} labels"), inp.train_labels.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(inp.seed);

        // Original-model view of the post-removal graph.
        let fwd = forward(inp.original, inp.retain_features)?;
        let predicted: Vec<usize> = fwd.probs.rows().into_iter().map(|r| argmax(r.iter())).collect();
        let reference: Vec<usize> = (0..n).map(|v| inp.train_labels[v].unwrap_or(predicted[v])).collect();

        let ue_truth = self
            .ue
            .iter()
            .map(|&u| inp.train_labels[u].ok_or_else(|| Error::Data(format!("unlearning entity {u} has no training label"))))
            .collect::<Result<Vec<_>>>()?;
        let shuffled = shuffle_labels(&ue_truth, inp.classes, rand::Rng::random(&mut rng))?;

        let mut in_ue = vec![false; n];
        for &u in &self.ue {
            in_ue[u] = true;
        }
        let non_ue_labels: Vec<Option<usize>> = (0..n).map(|v| (!in_ue[v]).then_some(reference[v])).collect();
        let prototypes = build_prototypes(fwd.emb.view(), &non_ue_labels, inp.classes)?;
        let mut ue_prototypes = Array2::zeros((self.ue.len(), inp.original.embed_dim()));
        for (i, &t) in shuffled.iter().enumerate() {
            ue_prototypes.row_mut(i).assign(&prototypes.get(t)?);
        }

        let samples = self.draw_samples(&reference, &predicted, inp, &mut rng);
        let memory = fwd.probs.select(Axis(0), &self.hie);
        let working = self.gather(inp, &samples, &shuffled, ue_prototypes, memory.clone())?;

        self.shuffled = Some(shuffled);
        self.prototypes = Some(prototypes);
        self.samples = Some(samples);
        self.memory = Some(memory);
        self.working = Some(working);
        Ok(())
    }

    fn draw_samples(
        &self,
        reference: &[usize],
        predicted: &[usize],
        inp: &PrepareInputs<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<AnchorSamples> {
        let by_label = |nodes: &[usize]| {
            let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &v in nodes {
                m.entry(reference[v]).or_default().push(v);
            }
            m
        };
        let mut forget_pool: Vec<usize> = self.ue.iter().chain(&self.hie).copied().collect();
        forget_pool.sort_unstable();
        let rest_by_label = by_label(&self.rest);
        let forget_by_label = by_label(&forget_pool);
        let empty = Vec::new();

        self.hie
            .iter()
            .map(|&anchor| {
                let label = predicted[anchor];
                let same = rest_by_label.get(&label).unwrap_or(&empty);
                let pool = if same.len() >= inp.positives { same } else { &self.rest };
                let positives = draw(rng, pool, inp.positives, None);
                let same = forget_by_label.get(&label).unwrap_or(&empty);
                // the anchor itself never counts as an available negative
                let usable = same.len() - usize::from(same.binary_search(&anchor).is_ok());
                let pool = if usable >= inp.negatives { same } else { &forget_pool };
                let negatives = draw(rng, pool, inp.negatives, Some(anchor));
                AnchorSamples {
                    anchor,
                    positives,
                    negatives,
                }
            })
            .collect()
    }

    fn gather(
        &self,
        inp: &PrepareInputs<'_>,
        samples: &[AnchorSamples],
        shuffled: &[usize],
        ue_prototypes: Array2<f64>,
        memory: Array2<f64>,
    ) -> Result<WorkingSet> {
        let mut row_of: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ids: Vec<usize> = self.ue.clone();
        for (i, &u) in self.ue.iter().enumerate() {
            row_of.insert(u, i);
        }
        let mut retained: Vec<usize> = self
            .hie
            .iter()
            .copied()
            .chain(samples.iter().flat_map(|s| s.positives.iter().chain(&s.negatives).copied()))
            .filter(|v| !row_of.contains_key(v))
            .collect();
        retained.sort_unstable();
        retained.dedup();
        for &v in &retained {
            row_of.insert(v, ids.len());
            ids.push(v);
        }
        let f = inp.retain_features.ncols();
        let mut x = Array2::zeros((ids.len(), f));
        x.slice_mut(ndarray::s![..self.ue.len(), ..])
            .assign(&inp.forget_features.select(Axis(0), &self.ue));
        x.slice_mut(ndarray::s![self.ue.len().., ..])
            .assign(&inp.retain_features.select(Axis(0), &retained));
        let anchors = samples
            .iter()
            .map(|s| {
                let rows = |v: &[usize]| v.iter().map(|u| row_of[u]).collect::<Vec<_>>();
                (row_of[&s.anchor], rows(&s.positives), rows(&s.negatives))
            })
            .collect();
        let hie_rows = self.hie.iter().map(|v| row_of[v]).collect();
        Ok(WorkingSet {
            x,
            ids,
            ue_targets: shuffled.to_vec(),
            ue_prototypes,
            anchors,
            hie_rows,
            memory,
        })
    }
}

/// Up to `k` distinct members of `pool`, never `exclude`, in pool order.
fn draw(rng: &mut ChaCha8Rng, pool: &[usize], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let want = k.min(pool.len());
    let extra = usize::from(exclude.is_some_and(|e| pool.contains(&e)));
    let mut idx: Vec<usize> = sample(rng, pool.len(), (want + extra).min(pool.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| pool[i])
        .filter(|&v| Some(v) != exclude)
        .take(want)
        .collect()
}
