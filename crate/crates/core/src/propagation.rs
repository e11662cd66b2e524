//! Weight-free decoupled propagation `X̃ = Σ_l w_l S^l X`.
//!
//! `S` is the self-loop-augmented adjacency rescaled by node degrees with a
//! kernel coefficient `r`: entry `(u, v)` of `Â = A + I` becomes
//! `d̂_u^{-r} · d̂_v^{r-1}`. At `r = 1/2` this is the symmetric GCN
//! normalization; at `r = 1` it is the random-walk matrix `D̂^{-1}Â` with unit
//! row sums. Powers of `S` are never materialized.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::par::{self, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sgc,
    S2gc,
    Gbp,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub k: usize,
    pub r: f64,
    pub weights: Vec<f64>,
    pub scheme: Scheme,
}

impl PropagationConfig {
    /// Only the last power contributes: `X̃ = S^k X`.
    pub fn sgc(k: usize, r: f64) -> Result<Self> {
        let mut weights = vec![0.0; k + 1];
        weights[k] = 1.0;
        Self::checked(k, r, weights, Scheme::Sgc)
    }

    /// Uniform average of `X, SX, …, S^k X`.
    pub fn s2gc(k: usize, r: f64) -> Result<Self> {
        let w = 1.0 / (k + 1) as f64;
        Self::checked(k, r, vec![w; k + 1], Scheme::S2gc)
    }

    /// Geometric weights `β(1-β)^l`.
    pub fn gbp(k: usize, r: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("gbp beta {beta} outside [0, 1]")));
        }
        let weights = (0..=k).map(|l| beta * (1.0 - beta).powi(l as i32)).collect();
        Self::checked(k, r, weights, Scheme::Gbp)
    }

    pub fn custom(r: f64, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("custom scheme needs at least one weight".into()));
        }
        Self::checked(weights.len() - 1, r, weights, Scheme::Custom)
    }

    fn checked(k: usize, r: f64, weights: Vec<f64>, scheme: Scheme) -> Result<Self> {
        let cfg = PropagationConfig {
            k,
            r,
            weights,
            scheme,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Config(format!("kernel coefficient r = {} outside [0, 1]", self.r)));
        }
        if self.weights.len() != self.k + 1 {
            return Err(Error::Config(format!(
                "{} weights for k = {} (need k + 1)",
                self.weights.len(),
                self.k
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("propagation weights must be finite".into()));
        }
        Ok(())
    }

    /// Index of the last power with a non-zero weight.
    fn last_active(&self) -> usize {
        self.weights.iter().rposition(|&w| w != 0.0).unwrap_or(0)
    }
}

/// Normalized adjacency in CSR form, self-loops included.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, u: usize) -> (&[usize], &[f64]) {
        let span = self.offsets[u]..self.offsets[u + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let (cols, vals) = self.row(u);
        cols.binary_search(&v).map_or(0.0, |i| vals[i])
    }

    fn spmm_into(&self, exec: Exec, input: &[f64], out: &mut [f64], width: usize) {
        par::for_each_row(exec, out, width, |u, dst| {
            dst.fill(0.0);
            let (cols, vals) = self.row(u);
            for (&v, &a) in cols.iter().zip(vals) {
                let src = &input[v * width..(v + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        });
    }
}

pub fn normalized_adjacency(graph: &Graph, r: f64) -> SparseOperator {
    let n = graph.n();
    let d_hat: Vec<f64> = (0..n).map(|u| (graph.degree(u) + 1) as f64).collect();
    let left: Vec<f64> = d_hat.iter().map(|d| d.powf(-r)).collect();
    let right: Vec<f64> = d_hat.iter().map(|d| d.powf(r - 1.0)).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(graph.targets().len() + n);
    offsets.push(0);
    for u in 0..n {
        let nbrs = graph.neighbors(u);
        let split = nbrs.partition_point(|&v| v < u);
        cols.extend_from_slice(&nbrs[..split]);
        cols.push(u);
        cols.extend_from_slice(&nbrs[split..]);
        offsets.push(cols.len());
    }
    let vals = (0..n)
        .flat_map(|u| {
            let (scale, right) = (left[u], &right);
            cols[offsets[u]..offsets[u + 1]].iter().map(move |&v| scale * right[v])
        })
        .collect();
    SparseOperator {
        offsets,
        cols,
        vals,
    }
}

pub fn propagate(op: &SparseOperator, x: ArrayView2<'_, f64>, config: &PropagationConfig) -> Result<Array2<f64>> {
    propagate_with(op, x, config, Exec::default())
}

pub fn propagate_with(
    op: &SparseOperator,
    x: ArrayView2<'_, f64>,
    config: &PropagationConfig,
    exec: Exec,
) -> Result<Array2<f64>> {
    let n = op.dim();
    if x.nrows() != n {
        return Err(Error::shape(format!("{n} rows"), format!("{} rows", x.nrows())));
    }
    config.validate()?;
    let width = x.ncols();
    let mut current: Vec<f64> = x.iter().copied().collect();
    let mut acc: Vec<f64> = current.iter().map(|v| config.weights[0] * v).collect();
    let mut next = vec![0.0; current.len()];
    for &w in &config.weights[1..=config.last_active()] {
        op.spmm_into(exec, &current, &mut next, width);
        std::mem::swap(&mut current, &mut next);
        if w != 0.0 {
            for (a, c) in acc.iter_mut().zip(&current) {
                *a += w * c;
            }
        }
    }
    Ok(Array2::from_shape_vec((n, width), acc).expect("buffer sized n * width"))
}

/// Column `u` of `Π = Σ_l w_l S^l`.
pub fn propagation_column(op: &SparseOperator, config: &PropagationConfig, u: usize) -> Result<Array1<f64>> {
    let cols = propagation_columns(op, config, &[u], Exec::Sequential)?;
    Ok(cols.column(0).to_owned())
}

/// Columns of `Π` for each listed node, as an `n × us.len()` matrix.
pub fn propagation_columns(
    op: &SparseOperator,
    config: &PropagationConfig,
    us: &[usize],
    exec: Exec,
) -> Result<Array2<f64>> {
    let n = op.dim();
    let mut e = Array2::zeros((n, us.len()));
    for (j, &u) in us.iter().enumerate() {
        if u >= n {
            return Err(Error::Index { id: u, n });
        }
        e[[u, j]] = 1.0;
    }
    propagate_with(op, e.view(), config, exec)
}
