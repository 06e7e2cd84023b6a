//! Random forest of fully grown Gini trees.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_both_classes, check_training};
use crate::data::Quality;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const DEFAULT_N_TREES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Class counts of the bootstrap rows in the leaf. `first` is the label
    /// of the first of them, used when the counts tie.
    Leaf { good: usize, bad: usize, first: Quality },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

/// `n · gini = 2·g·b / n`; written with the symmetric product so swapping
/// the classes gives bit-identical impurities.
fn weighted_gini(good: usize, bad: usize) -> f64 {
    let n = good + bad;
    if n == 0 {
        return 0.0;
    }
    2.0 * (good as f64 * bad as f64) / n as f64
}

struct Grower<'a> {
    x: &'a DenseMatrix,
    y: &'a [bool],
    max_features: usize,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let good = rows.iter().filter(|&&r| self.y[r]).count();
        let first = if self.y[rows[0]] { Quality::Good } else { Quality::Bad };
        TreeNode::Leaf { good, bad: rows.len() - good, first }
    }

    /// Best split on one feature: (impurity, threshold). Ties keep the
    /// smallest threshold.
    fn best_on(&self, rows: &[usize], feature: usize) -> Option<(f64, f64)> {
        let mut v: Vec<(f64, bool)> = rows.iter().map(|&r| (self.x[(r, feature)], self.y[r])).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        if v[0].0 == v[v.len() - 1].0 {
            return None;
        }
        let total_good = v.iter().filter(|p| p.1).count();
        let n = v.len();
        let mut left_good = 0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            if v[i].1 {
                left_good += 1;
            }
            if v[i].0 == v[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let imp = weighted_gini(left_good, nl - left_good)
                + weighted_gini(total_good - left_good, (n - nl) - (total_good - left_good));
            let thr = 0.5 * (v[i].0 + v[i + 1].0);
            if best.is_none_or(|(b, _)| imp < b) {
                best = Some((imp, thr));
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(self.leaf(&rows));
        let good = rows.iter().filter(|&&r| self.y[r]).count();
        if good == 0 || good == rows.len() {
            return id;
        }
        // visit features in random order until max_features non-constant
        // ones have been examined
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(rng);
        let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
        for f in features {
            if let Some((imp, thr)) = self.best_on(&rows, f) {
                candidates.push((f, imp, thr));
                if candidates.len() == self.max_features {
                    break;
                }
            }
        }
        let Some(&(feature, _, threshold)) = candidates
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)).then(a.2.total_cmp(&b.2)))
        else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| self.x[(i, feature)] <= threshold);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
        id
    }
}

impl DecisionTree {
    fn leaf_for(&self, q: &[f64]) -> &TreeNode {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if q[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, q: &[f64]) -> Quality {
        match self.leaf_for(q) {
            TreeNode::Leaf { good, bad, first } => match good.cmp(bad) {
                std::cmp::Ordering::Greater => Quality::Good,
                std::cmp::Ordering::Less => Quality::Bad,
                std::cmp::Ordering::Equal => *first,
            },
            TreeNode::Split { .. } => unreachable!("leaf_for stops at leaves"),
        }
    }

    pub fn leaves_are_nonempty(&self) -> bool {
        self.nodes.iter().all(|n| !matches!(n, TreeNode::Leaf { good: 0, bad: 0, .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    trees: Vec<DecisionTree>,
    max_features: usize,
    dim: usize,
    bootstrap: bool,
    seed: u64,
}

impl RandomForestModel {
    pub fn fit(x: &DenseMatrix, y: &[Quality], n_trees: usize, seed: u64) -> Result<Self> {
        Self::fit_with(x, y, n_trees, true, seed)
    }

    pub fn fit_with(x: &DenseMatrix, y: &[Quality], n_trees: usize, bootstrap: bool, seed: u64) -> Result<Self> {
        check_training(x, y)?;
        check_both_classes(y)?;
        if n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
        }
        let n = x.rows();
        let yb: Vec<bool> = y.iter().map(|l| *l == Quality::Good).collect();
        let max_features = ((x.cols() as f64).sqrt().ceil() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..n_trees)
            .map(|_| {
                let rows: Vec<usize> =
                    if bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
                let mut g = Grower { x, y: &yb, max_features, nodes: Vec::new() };
                g.grow(rows, &mut rng);
                DecisionTree { nodes: g.nodes }
            })
            .collect();
        Ok(RandomForestModel { trees, max_features, dim: x.cols(), bootstrap, seed })
    }

    /// Majority of tree votes and the fraction of trees behind it. An even
    /// split follows the first tree.
    pub fn predict_with_fraction(&self, q: &[f64]) -> Result<(Quality, f64)> {
        if q.len() != self.dim {
            return Err(Error::dims(self.dim, q.len()));
        }
        let votes: Vec<Quality> = self.trees.iter().map(|t| t.predict(q)).collect();
        let good = votes.iter().filter(|v| **v == Quality::Good).count();
        let bad = votes.len() - good;
        let label = match good.cmp(&bad) {
            std::cmp::Ordering::Greater => Quality::Good,
            std::cmp::Ordering::Less => Quality::Bad,
            std::cmp::Ordering::Equal => votes[0],
        };
        let agree = if label == Quality::Good { good } else { bad };
        Ok((label, agree as f64 / votes.len() as f64))
    }

    pub fn predict(&self, q: &[f64]) -> Result<Quality> {
        Ok(self.predict_with_fraction(q)?.0)
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn max_features(&self) -> usize {
        self.max_features
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

pub fn rf_fit(x: &DenseMatrix, y: &[Quality], n_trees: usize, seed: u64) -> Result<RandomForestModel> {
    RandomForestModel::fit(x, y, n_trees, seed)
}
