//! k-nearest-neighbour majority vote.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::check_training;
use crate::data::Quality;
use crate::error::{Error, Result};
use crate::linalg::squared_euclidean;
use crate::matrix::DenseMatrix;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    x: DenseMatrix,
    y: Vec<Quality>,
    k: usize,
}

/// Neighbour order: distance, then coordinates, then label. It depends only
/// on the training set as a multiset, so row order never matters.
fn neighbour_cmp(a: &(f64, &[f64], Quality), b: &(f64, &[f64], Quality)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| {
            a.1.iter()
                .zip(b.1)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| (a.2 == Quality::Good).cmp(&(b.2 == Quality::Good)))
}

impl KnnModel {
    pub fn fit(x: &DenseMatrix, y: &[Quality], k: usize) -> Result<Self> {
        check_training(x, y)?;
        if k == 0 || k > x.rows() {
            return Err(Error::InvalidParameter(format!("k must lie in 1..={}, got {k}", x.rows())));
        }
        Ok(KnnModel { x: x.clone(), y: y.to_vec(), k })
    }

    /// Majority label of the k nearest neighbours and the fraction of them
    /// that agree. A split vote goes to the single nearest neighbour.
    pub fn predict_with_fraction(&self, q: &[f64]) -> Result<(Quality, f64)> {
        if q.len() != self.x.cols() {
            return Err(Error::dims(self.x.cols(), q.len()));
        }
        let mut nb: Vec<(f64, &[f64], Quality)> =
            self.x.row_iter().zip(&self.y).map(|(r, &l)| (squared_euclidean(q, r), r, l)).collect();
        if self.k < nb.len() {
            nb.select_nth_unstable_by(self.k - 1, neighbour_cmp);
            nb.truncate(self.k);
        }
        nb.sort_by(neighbour_cmp);
        let good = nb.iter().filter(|n| n.2 == Quality::Good).count();
        let bad = nb.len() - good;
        let label = match good.cmp(&bad) {
            Ordering::Greater => Quality::Good,
            Ordering::Less => Quality::Bad,
            Ordering::Equal => nb[0].2,
        };
        let agree = if label == Quality::Good { good } else { bad };
        Ok((label, agree as f64 / nb.len() as f64))
    }

    pub fn predict(&self, q: &[f64]) -> Result<Quality> {
        Ok(self.predict_with_fraction(q)?.0)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

pub fn knn_fit(x: &DenseMatrix, y: &[Quality], k: usize) -> Result<KnnModel> {
    KnnModel::fit(x, y, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<Quality> {
        (0..n).map(|_| if rng.random_bool(0.5) { Quality::Good } else { Quality::Bad }).collect()
    }

    /// Full scan with a complete sort; a split vote goes to the nearest.
    fn oracle(x: &DenseMatrix, y: &[Quality], k: usize, q: &[f64]) -> Quality {
        let mut all: Vec<(f64, usize)> = (0..x.rows())
            .map(|i| ((0..x.cols()).map(|j| (x[(i, j)] - q[j]).powi(2)).sum::<f64>(), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let votes: i64 = all[..k].iter().map(|&(_, i)| if y[i] == Quality::Good { 1 } else { -1 }).sum();
        match votes.signum() {
            1 => Quality::Good,
            -1 => Quality::Bad,
            _ => y[all[0].1],
        }
    }

    #[test]
    fn k1_returns_the_matching_point() {
        let x = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        let y = [Quality::Good, Quality::Bad, Quality::Good];
        let m = knn_fit(&x, &y, 1).unwrap();
        assert_eq!(m.predict(&[1.0, 1.0]).unwrap(), Quality::Bad);
        assert_eq!(m.predict(&[2.0, 0.0]).unwrap(), Quality::Good);
    }

    #[test]
    fn separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut blob = |c: f64, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..3).map(|_| c + { let z: f64 = StandardNormal.sample(&mut rng); z }).collect()).collect()
        };
        let mut rows = blob(0.0, 100);
        rows.extend(blob(8.0, 100));
        let y: Vec<Quality> = (0..200).map(|i| if i < 100 { Quality::Bad } else { Quality::Good }).collect();
        let m = knn_fit(&DenseMatrix::from_rows(&rows).unwrap(), &y, 5).unwrap();
        let test_bad = blob(0.0, 200);
        let test_good = blob(8.0, 200);
        let correct = test_bad.iter().filter(|q| m.predict(q).unwrap() == Quality::Bad).count()
            + test_good.iter().filter(|q| m.predict(q).unwrap() == Quality::Good).count();
        assert!(correct as f64 / 400.0 >= 0.99);
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let n = rng.random_range(4..60);
            let d = rng.random_range(1..6);
            let x = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
            let mut y = labels(n, &mut rng);
            y[0] = Quality::Good;
            y[1] = Quality::Bad;
            let k = rng.random_range(1..=n.min(9));
            let m = knn_fit(&x, &y, k).unwrap();
            for _ in 0..10 {
                let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.2..1.2)).collect();
                assert_eq!(m.predict(&q).unwrap(), oracle(&x, &y, k, &q));
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // a coarse lattice produces many exact distance ties
        let x = DenseMatrix::from_fn(40, 2, |_, _| rng.random_range(0..4) as f64);
        let mut y = labels(40, &mut rng);
        y[0] = Quality::Good;
        y[1] = Quality::Bad;
        let m = knn_fit(&x, &y, 4).unwrap();
        let mut order: Vec<usize> = (0..40).collect();
        for _ in 0..5 {
            order.shuffle(&mut rng);
            let xp = x.select_rows(&order);
            let yp: Vec<Quality> = order.iter().map(|&i| y[i]).collect();
            let mp = knn_fit(&xp, &yp, 4).unwrap();
            for a in 0..5 {
                for b in 0..5 {
                    let q = [a as f64 - 0.5, b as f64 * 0.9];
                    assert_eq!(m.predict_with_fraction(&q).unwrap(), mp.predict_with_fraction(&q).unwrap());
                }
            }
        }
    }

    #[test]
    fn errors() {
        let x = DenseMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let y = [Quality::Good, Quality::Bad];
        assert!(knn_fit(&x, &y, 3).is_err());
        assert!(knn_fit(&x, &y, 0).is_err());
        assert!(knn_fit(&x, &y[..1], 1).is_err());
        assert!(knn_fit(&x, &y, 1).unwrap().predict(&[0.0, 1.0]).is_err());
    }
}
