//! Isolation forest.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::threshold::contamination_threshold;
use crate::data::Condition;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const DEFAULT_N_TREES: usize = 100;
pub const MAX_SUBSAMPLE: usize = 256;

/// Average path length of an unsuccessful BST search over `n` points:
/// `2H(n−1) − 2(n−1)/n`, with `c(1) = c(0) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

/// `s = 2^(−E(h)/c(ψ))`.
pub fn anomaly_score(mean_path: f64, subsample: usize) -> f64 {
    let c = average_path_length(subsample);
    if c == 0.0 {
        return 1.0;
    }
    2f64.powf(-mean_path / c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, value: f64, left: usize, right: usize },
    Leaf { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    /// Arena; the root is node 0.
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn grow(x: &DenseMatrix, rows: Vec<usize>, depth_cap: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.build(x, rows, 0, depth_cap, rng);
        tree
    }

    fn build(&mut self, x: &DenseMatrix, rows: Vec<usize>, depth: usize, cap: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= cap || rows.len() <= 1 {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..x.cols())
            .filter_map(|j| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(x[(r, j)]), hi.max(x[(r, j)]))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let mut value = rng.random_range(lo..hi);
        while value <= lo {
            value = rng.random_range(lo..hi);
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x[(i, feature)] < value);
        let left = self.build(x, l, depth + 1, cap, rng);
        let right = self.build(x, r, depth + 1, cap, rng);
        self.nodes[id] = Node::Split { feature, value, left, right };
        id
    }

    /// Depth of the leaf reached by `x`, extended by `c(size)` at the leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[node] {
                Node::Split { feature, value, left, right } => {
                    node = if x[feature] < value { left } else { right };
                    depth += 1;
                }
                Node::Leaf { size } => return depth as f64 + average_path_length(size),
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        fn walk(t: &IsolationTree, n: usize) -> usize {
            match t.nodes[n] {
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IforestModel {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    dim: usize,
    threshold: f64,
    /// Set when the training data were constant: every tree is one leaf.
    #[serde(default)]
    degenerate: bool,
}

impl IforestModel {
    pub fn fit(x: &DenseMatrix, n_trees: usize, contamination: f64, seed: u64) -> Result<Self> {
        let n = x.rows();
        if n < 4 {
            return Err(Error::InsufficientData { required: 4, actual: n });
        }
        if n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
        }
        super::threshold::check_contamination(contamination)?;
        let psi = n.min(MAX_SUBSAMPLE);
        let cap = (psi as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees: Vec<IsolationTree> = (0..n_trees)
            .map(|_| {
                let rows = sample(&mut rng, n, psi).into_vec();
                IsolationTree::grow(x, rows, cap, &mut rng)
            })
            .collect();
        let degenerate = trees.iter().all(|t| t.nodes.len() == 1);
        let mut model = IforestModel { trees, subsample_size: psi, dim: x.cols(), threshold: 0.0, degenerate };
        let scores: Vec<f64> = x.row_iter().map(|r| model.score_unchecked(r)).collect();
        model.threshold = contamination_threshold(&scores, contamination)?;
        Ok(model)
    }

    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64)
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        let e = self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        anomaly_score(e, self.subsample_size)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::dims(self.dim, x.len()));
        }
        Ok(())
    }

    /// Score in (0, 1]; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.score_unchecked(x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Condition> {
        Ok(if self.score(x)? > self.threshold { Condition::Anomalous } else { Condition::Normal })
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

pub fn iforest_fit(x: &DenseMatrix, n_trees: usize, contamination: f64, seed: u64) -> Result<IforestModel> {
    IforestModel::fit(x, n_trees, contamination, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn normalizer_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2(1 + 1/2) − 2·2/3
        assert!((average_path_length(3) - (3.0 - 4.0 / 3.0)).abs() < 1e-15);
        let c = average_path_length(256);
        assert_eq!(anomaly_score(c, 256), 0.5);
        assert_eq!(anomaly_score(0.0, 256), 1.0);
    }

    #[test]
    fn lone_point_isolates_fastest() {
        let mut rows = vec![[0.0]; 99];
        rows.push([100.0]);
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let m = iforest_fit(&x, 100, 0.05, 3).unwrap();
        assert!(m.mean_path_length(&[100.0]).unwrap() < m.mean_path_length(&[0.0]).unwrap());
        assert!(m.score(&[100.0]).unwrap() > m.score(&[0.0]).unwrap());
    }

    #[test]
    fn gaussian_outlier_separation_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DenseMatrix::from_fn(500, 2, |_, _| StandardNormal.sample(&mut rng));
        let m = iforest_fit(&x, 100, 0.05, 11).unwrap();
        let inlier = m.score(&[0.0, 0.0]).unwrap();
        let outlier = m.score(&[10.0, 0.0]).unwrap();
        assert!(outlier - inlier > 0.1, "{outlier} vs {inlier}");
        for r in x.row_iter() {
            let s = m.score(r).unwrap();
            assert!(s > 0.0 && s <= 1.0);
        }
        let cap = (256f64).log2().ceil() as usize;
        assert!(m.trees().iter().all(|t| t.max_depth() <= cap));
        assert_eq!(m.subsample_size(), 256);
    }

    #[test]
    fn longer_paths_in_every_tree_mean_lower_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DenseMatrix::from_fn(200, 3, |_, _| StandardNormal.sample(&mut rng));
        let m = iforest_fit(&x, 3, 0.05, 2).unwrap();
        let mut probes: Vec<Vec<f64>> = x.row_iter().take(60).map(|r| r.to_vec()).collect();
        probes.extend((1..6).map(|i| vec![3.0 * i as f64, -2.0 * i as f64, i as f64]));
        let mut checked = 0;
        for a in &probes {
            for b in &probes {
                if m.trees().iter().all(|t| t.path_length(a) > t.path_length(b)) {
                    assert!(m.score(a).unwrap() < m.score(b).unwrap());
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
        for e in [0.5, 1.0, 4.0, 9.0] {
            assert!(anomaly_score(e, 200) > anomaly_score(e + 0.25, 200));
        }
    }

    #[test]
    fn constant_data_is_flagged() {
        let x = DenseMatrix::from_rows(&[[2.0, 2.0]; 20]).unwrap();
        let m = iforest_fit(&x, 10, 0.1, 0).unwrap();
        assert!(m.is_degenerate());
        assert_eq!(m.score(&[2.0, 2.0]).unwrap(), m.score(&[50.0, -3.0]).unwrap());
    }

    #[test]
    fn deterministic_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DenseMatrix::from_fn(60, 2, |_, _| StandardNormal.sample(&mut rng));
        let a = iforest_fit(&x, 20, 0.1, 4).unwrap();
        assert_eq!(a, iforest_fit(&x, 20, 0.1, 4).unwrap());
        assert_ne!(a, iforest_fit(&x, 20, 0.1, 5).unwrap());
        assert!(iforest_fit(&x.select_rows(&[0, 1, 2]), 20, 0.1, 0).is_err());
        assert!(iforest_fit(&x, 0, 0.1, 0).is_err());
        assert!(a.score(&[0.0]).is_err());
    }
}
