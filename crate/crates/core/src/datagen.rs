//! Stochastic block model graphs with class-separated Gaussian features.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmSpec {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Class `c` has mean `separation · e_c`; noise is unit-variance.
    pub separation: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            n: 2000,
            classes: 4,
            p_in: 0.05,
            p_out: 0.005,
            feature_dim: 32,
            separation: 2.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.n < self.classes {
            return fail(format!("n = {} smaller than class count {}", self.n, self.classes));
        }
        if !(0.0 <= self.p_out && self.p_out <= 1.0 && 0.0 <= self.p_in && self.p_in <= 1.0) {
            return fail("edge probabilities must lie in [0, 1]".into());
        }
        // p_in = p_out = 0 is accepted as the degenerate edgeless model
        if self.p_out >= self.p_in && !(self.p_in == 0.0 && self.p_out == 0.0) {
            return fail(format!("need p_out < p_in, got {} >= {}", self.p_out, self.p_in));
        }
        if self.feature_dim < self.classes {
            return fail(format!(
                "feature_dim {} cannot hold {} axis-aligned class means",
                self.feature_dim, self.classes
            ));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) || !self.separation.is_finite() {
            return fail("train_fraction must lie in [0, 1] and separation must be finite".into());
        }
        Ok(())
    }
}

pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut class = vec![0usize; n];
    for (i, &u) in order.iter().enumerate() {
        class[u] = i % spec.classes;
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class[u] == class[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut features = Array2::<f64>::zeros((n, spec.feature_dim));
    for (u, mut row) in features.rows_mut().into_iter().enumerate() {
        for x in row.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        row[class[u]] += spec.separation;
    }

    order.shuffle(&mut rng);
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let (train, test) = order.split_at(n_train);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();

    let labels = class.into_iter().map(Some).collect();
    Ok(build_graph(n, &edges, features, labels, &train, &test)?.graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, classes: usize, p_in: f64, p_out: f64) -> SbmSpec {
        SbmSpec {
            n,
            classes,
            p_in,
            p_out,
            feature_dim: classes.max(2),
            ..SbmSpec::default()
        }
    }

    #[test]
    fn zero_probabilities_give_no_edges() {
        let g = generate_sbm(&spec(50, 3, 0.0, 0.0)).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn complete_blocks_when_p_in_is_one() {
        let g = generate_sbm(&spec(4, 2, 1.0, 0.0)).unwrap();
        assert_eq!(g.num_edges(), 2);
        for (u, v) in g.edges() {
            assert_eq!(g.label(u), g.label(v));
        }
    }

    #[test]
    fn balanced_classes_and_split() {
        let g = generate_sbm(&spec(103, 4, 0.1, 0.01)).unwrap();
        let mut sizes = [0usize; 4];
        for l in g.labels() {
            sizes[l.unwrap()] += 1;
        }
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(g.train_nodes().len(), 82);
        assert_eq!(g.train_nodes().len() + g.test_nodes().len(), 103);
    }

    #[test]
    fn same_seed_same_graph() {
        let s = spec(60, 3, 0.2, 0.02);
        assert_eq!(generate_sbm(&s).unwrap(), generate_sbm(&s).unwrap());
        let other = SbmSpec { seed: 1, ..s.clone() };
        assert_ne!(generate_sbm(&s).unwrap(), generate_sbm(&other).unwrap());
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            spec(10, 1, 0.5, 0.1),
            spec(2, 3, 0.5, 0.1),
            spec(10, 2, 0.1, 0.2),
            SbmSpec { feature_dim: 1, ..spec(10, 2, 0.5, 0.1) },
        ] {
            assert_eq!(generate_sbm(&bad).unwrap_err().class(), "ConfigError");
        }
    }
}
