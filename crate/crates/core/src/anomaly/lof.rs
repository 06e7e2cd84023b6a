//! Local outlier factor in novelty mode.

use serde::{Deserialize, Serialize};

use super::threshold::contamination_threshold;
use crate::data::Condition;
use crate::error::{Error, Result};
use crate::linalg::euclidean;
use crate::matrix::DenseMatrix;

/// Added to the mean reachability distance so duplicates give a finite density.
const LRD_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    train: DenseMatrix,
    k_neighbors: usize,
    /// Distance from each training point to its k-th neighbour (itself excluded).
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    /// Leave-self-out scores of the training rows; the threshold is their quantile.
    train_scores: Vec<f64>,
    threshold: f64,
}

/// The `k` nearest rows of `x` to `q`, ordered by (distance, index), skipping `exclude`.
fn knn(x: &DenseMatrix, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = x
        .row_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, r)| (euclidean(q, r), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

impl LofModel {
    pub fn fit(train: &DenseMatrix, k_neighbors: usize, contamination: f64) -> Result<Self> {
        let n = train.rows();
        if k_neighbors == 0 {
            return Err(Error::InvalidParameter("k_neighbors must be at least 1".into()));
        }
        if n <= k_neighbors {
            return Err(Error::InsufficientData { required: k_neighbors + 1, actual: n });
        }
        let neighbours: Vec<Vec<(f64, usize)>> =
            (0..n).map(|i| knn(train, train.row(i), k_neighbors, Some(i))).collect();
        let k_distance: Vec<f64> = neighbours.iter().map(|nb| nb[k_neighbors - 1].0).collect();
        let lrd_of = |nb: &[(f64, usize)]| {
            let reach: f64 = nb.iter().map(|&(d, o)| d.max(k_distance[o])).sum::<f64>() / nb.len() as f64;
            1.0 / (reach + LRD_GUARD)
        };
        let lrd: Vec<f64> = neighbours.iter().map(|nb| lrd_of(nb)).collect();
        let train_scores: Vec<f64> = neighbours
            .iter()
            .zip(&lrd)
            .map(|(nb, own)| nb.iter().map(|&(_, o)| lrd[o]).sum::<f64>() / nb.len() as f64 / own)
            .collect();
        let threshold = contamination_threshold(&train_scores, contamination)?;
        Ok(LofModel { train: train.clone(), k_neighbors, k_distance, lrd, train_scores, threshold })
    }

    /// Ratio of the neighbours' mean local reachability density to the
    /// point's own. Around 1 inside the training distribution.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.train.cols() {
            return Err(Error::dims(self.train.cols(), x.len()));
        }
        let nb = knn(&self.train, x, self.k_neighbors, None);
        let reach: f64 = nb.iter().map(|&(d, o)| d.max(self.k_distance[o])).sum::<f64>() / nb.len() as f64;
        let own = 1.0 / (reach + LRD_GUARD);
        Ok(nb.iter().map(|&(_, o)| self.lrd[o]).sum::<f64>() / nb.len() as f64 / own)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Condition> {
        Ok(if self.score(x)? > self.threshold { Condition::Anomalous } else { Condition::Normal })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn training_scores(&self) -> &[f64] {
        &self.train_scores
    }

    pub fn k_neighbors(&self) -> usize {
        self.k_neighbors
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }
}

pub fn lof_fit(train: &DenseMatrix, k_neighbors: usize, contamination: f64) -> Result<LofModel> {
    LofModel::fit(train, k_neighbors, contamination)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook LOF straight from the definitions, using a full distance table.
    fn oracle(train: &[Vec<f64>], k: usize, q: &[f64], q_index: Option<usize>) -> f64 {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let neighbours = |p: &[f64], skip: Option<usize>| {
            let mut v: Vec<(f64, usize)> =
                (0..train.len()).filter(|&j| Some(j) != skip).map(|j| (dist(p, &train[j]), j)).collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            v.truncate(k);
            v
        };
        let kdist = |o: usize| neighbours(&train[o], Some(o))[k - 1].0;
        let lrd = |p: &[f64], skip: Option<usize>| {
            let nb = neighbours(p, skip);
            1.0 / (nb.iter().map(|&(d, o)| d.max(kdist(o))).sum::<f64>() / k as f64 + 1e-10)
        };
        let nb = neighbours(q, q_index);
        let mean_nb = nb.iter().map(|&(_, o)| lrd(&train[o], Some(o))).sum::<f64>() / k as f64;
        mean_nb / lrd(q, q_index)
    }

    fn cloud(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..25 {
            let n = rng.random_range(6..=50);
            let d = rng.random_range(1..=4);
            let k = rng.random_range(1..n.min(12));
            let x = cloud(n, d, seed);
            let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.to_vec()).collect();
            let m = lof_fit(&x, k, 0.1).unwrap();
            for _ in 0..5 {
                let q: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (a, b) = (m.score(&q).unwrap(), oracle(&rows, k, &q, None));
                assert!((a - b).abs() <= 1e-9 * b.max(1.0), "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn uniform_grid_scores_near_one() {
        let pts: Vec<[f64; 2]> = (0..7).flat_map(|i| (0..7).map(move |j| [i as f64, j as f64])).collect();
        let x = DenseMatrix::from_rows(&pts).unwrap();
        let m = lof_fit(&x, 3, 0.1).unwrap();
        for p in &pts {
            let s = m.score(p).unwrap();
            assert!((0.8..=1.2).contains(&s), "{p:?}: {s}");
        }
    }

    #[test]
    fn duplicates_stay_finite() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0]; 10]).unwrap();
        let m = lof_fit(&x, 3, 0.1).unwrap();
        assert!(m.threshold().is_finite());
        assert!(m.score(&[1.0, 2.0]).unwrap().is_finite());
        assert!(m.score(&[5.0, 2.0]).unwrap().is_finite());
    }

    #[test]
    fn threshold_flags_ten_percent_of_training() {
        let x = cloud(100, 2, 4);
        let m = lof_fit(&x, 5, 0.1).unwrap();
        assert_eq!(m.training_scores().iter().filter(|s| **s > m.threshold()).count(), 10);
        let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.to_vec()).collect();
        for i in [0, 17, 99] {
            let expect = oracle(&rows, 5, &rows[i], Some(i));
            assert!((m.training_scores()[i] - expect).abs() <= 1e-9 * expect);
        }
    }

    #[test]
    fn far_point_and_duplicate_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DenseMatrix::from_fn(60, 2, |_, _| rng.random_range(-0.5..0.5));
        let m = lof_fit(&x, 5, 0.05).unwrap();
        assert!(m.score(&[10.0, 10.0]).unwrap() > 2.0);
        assert_eq!(m.predict(&[10.0, 10.0]).unwrap(), Condition::Anomalous);
        let centre = (0..60)
            .min_by(|&a, &b| {
                let na = x.row(a).iter().map(|v| v * v).sum::<f64>();
                let nb = x.row(b).iter().map(|v| v * v).sum::<f64>();
                na.total_cmp(&nb)
            })
            .unwrap();
        let s = m.score(x.row(centre)).unwrap();
        assert!((0.7..1.3).contains(&s), "{s}");
        assert_eq!(m.predict(x.row(centre)).unwrap(), Condition::Normal);
    }

    #[test]
    fn k_sweep_is_finite() {
        let x = cloud(80, 3, 12);
        for k in 2..=20 {
            let m = lof_fit(&x, k, 0.05).unwrap();
            for q in [[0.0, 0.0, 0.0], [0.9, -0.9, 0.3], [3.0, 3.0, 3.0]] {
                assert!(m.score(&q).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn errors() {
        let x = cloud(5, 2, 0);
        assert!(lof_fit(&x, 5, 0.1).is_err());
        assert!(lof_fit(&x, 0, 0.1).is_err());
        assert!(lof_fit(&x, 2, 0.6).is_err());
        assert!(lof_fit(&x, 2, 0.1).unwrap().score(&[1.0]).is_err());
    }
}
