//! Elliptic envelope: robust location/scatter by concentration steps, scored
//! by squared Mahalanobis distance.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::threshold::contamination_threshold;
use crate::data::Condition;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_regularized, column_means, covariance, forward_substitute, log_det_from_cholesky};
use crate::matrix::DenseMatrix;

pub const DEFAULT_SUPPORT_FRACTION: f64 = 0.8;
pub const N_STARTS: usize = 20;
const MAX_CSTEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeModel {
    center: Vec<f64>,
    covariance: DenseMatrix,
    /// Lower Cholesky factor of `covariance` (after any ridge).
    chol: DenseMatrix,
    threshold: f64,
    /// True when the covariance needed a ridge to become positive definite.
    #[serde(default)]
    regularized: bool,
}

struct Estimate {
    center: Vec<f64>,
    chol: DenseMatrix,
    cov: DenseMatrix,
    log_det: f64,
    regularized: bool,
    support: Vec<usize>,
}

fn estimate(x: &DenseMatrix, support: Vec<usize>) -> Result<Estimate> {
    let sub = x.select_rows(&support);
    let center = column_means(&sub);
    let cov = covariance(&sub, &center, 0);
    let (chol, cov, regularized) = cholesky_regularized(&cov)?;
    let log_det = log_det_from_cholesky(&chol);
    Ok(Estimate { center, chol, cov, log_det, regularized, support })
}

fn mahalanobis_sq(center: &[f64], chol: &DenseMatrix, x: &[f64]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    forward_substitute(chol, &diff).iter().map(|v| v * v).sum()
}

/// Indices of the `h` rows closest to the estimate, ordered by (distance, index).
fn closest(x: &DenseMatrix, est: &Estimate, h: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> =
        x.row_iter().enumerate().map(|(i, r)| (mahalanobis_sq(&est.center, &est.chol, r), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = d[..h].iter().map(|p| p.1).collect();
    idx.sort_unstable();
    idx
}

impl EeModel {
    pub fn fit(x: &DenseMatrix, contamination: f64, support_fraction: f64, seed: u64) -> Result<Self> {
        let (n, d) = x.shape();
        if n <= 2 * d {
            return Err(Error::InsufficientData { required: 2 * d + 1, actual: n });
        }
        if !(support_fraction > 0.5 && support_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "support_fraction must lie in (0.5, 1], got {support_fraction}"
            )));
        }
        super::threshold::check_contamination(contamination)?;
        let h = ((support_fraction * n as f64).ceil() as usize).clamp(d + 1, n);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<Estimate> = None;
        for _ in 0..N_STARTS {
            let mut support = sample(&mut rng, n, h).into_vec();
            support.sort_unstable();
            let mut est = estimate(x, support)?;
            for _ in 0..MAX_CSTEPS {
                let next = closest(x, &est, h);
                if next == est.support {
                    break;
                }
                est = estimate(x, next)?;
            }
            if best.as_ref().is_none_or(|b| est.log_det < b.log_det) {
                best = Some(est);
            }
        }
        let best = best.expect("at least one start");

        // rescale the raw subset covariance so it is consistent for Gaussian data
        let dist: Vec<f64> = x.row_iter().map(|r| mahalanobis_sq(&best.center, &best.chol, r)).collect();
        let med = crate::features::median(&dist);
        let chi2_median = ChiSquared::new(d as f64)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .inverse_cdf(0.5);
        let (cov, chol, regularized) = if med > 0.0 {
            let scaled = best.cov.scale(med / chi2_median);
            let (l, c, r) = cholesky_regularized(&scaled)?;
            (c, l, r || best.regularized)
        } else {
            (best.cov, best.chol, best.regularized)
        };

        let scores: Vec<f64> = x.row_iter().map(|r| mahalanobis_sq(&best.center, &chol, r)).collect();
        let threshold = contamination_threshold(&scores, contamination)?;
        Ok(EeModel { center: best.center, covariance: cov, chol, threshold, regularized })
    }

    /// Squared Mahalanobis distance `(x−μ)ᵀ Σ⁻¹ (x−μ)`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.center.len() {
            return Err(Error::dims(self.center.len(), x.len()));
        }
        Ok(mahalanobis_sq(&self.center, &self.chol, x))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Condition> {
        Ok(if self.score(x)? > self.threshold { Condition::Anomalous } else { Condition::Normal })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn covariance(&self) -> &DenseMatrix {
        &self.covariance
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn is_regularized(&self) -> bool {
        self.regularized
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Builds a model from a known location and scatter.
    pub fn from_parts(center: Vec<f64>, covariance: DenseMatrix, threshold: f64) -> Result<Self> {
        if covariance.shape() != (center.len(), center.len()) {
            return Err(Error::dims(format!("{0}x{0} covariance", center.len()), format!("{:?}", covariance.shape())));
        }
        let (chol, covariance, regularized) = cholesky_regularized(&covariance)?;
        Ok(EeModel { center, covariance, chol, threshold, regularized })
    }
}

pub fn ee_fit(x: &DenseMatrix, contamination: f64, support_fraction: f64, seed: u64) -> Result<EeModel> {
    EeModel::fit(x, contamination, support_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, matmul};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, mean: &[f64], mix: &DenseMatrix, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let d = mean.len();
        let z = DenseMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
        let mut x = matmul(&z, mix).unwrap();
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] += mean[j];
            }
        }
        x
    }

    /// Gauss-Jordan inverse, used only as an oracle.
    fn invert(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut m = DenseMatrix::from_fn(n, 2 * n, |i, j| if j < n { a[(i, j)] } else if j - n == i { 1.0 } else { 0.0 });
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[(x, c)].abs().total_cmp(&m[(y, c)].abs())).unwrap();
            for j in 0..2 * n {
                let t = m[(c, j)];
                m[(c, j)] = m[(p, j)];
                m[(p, j)] = t;
            }
            let piv = m[(c, c)];
            for j in 0..2 * n {
                m[(c, j)] /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[(r, c)];
                    for j in 0..2 * n {
                        m[(r, j)] -= f * m[(c, j)];
                    }
                }
            }
        }
        DenseMatrix::from_fn(n, n, |i, j| m[(i, n + j)])
    }

    #[test]
    fn clean_gaussian_center_and_flag_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mix = DenseMatrix::from_rows(&[[2.0, 0.0], [0.6, 0.5]]).unwrap();
        let x = gaussian(1000, &[3.0, -1.0], &mix, &mut rng);
        let m = ee_fit(&x, 0.05, 0.8, 7).unwrap();
        // marginal sds are 2 and ~0.78
        assert!((m.center()[0] - 3.0).abs() < 0.2, "{:?}", m.center());
        assert!((m.center()[1] + 1.0).abs() < 0.078, "{:?}", m.center());
        let flagged = x.row_iter().filter(|r| m.predict(r).unwrap() == Condition::Anomalous).count();
        assert!((flagged as f64 / 1000.0 - 0.05).abs() <= 0.02);
        assert!((flagged as f64 / 1000.0 - 0.05).abs() <= 1.0 / 1000.0 + 1e-12);
    }

    #[test]
    fn robust_to_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mix = DenseMatrix::from_rows(&[[1.0, 0.3, 0.0], [0.0, 1.0, 0.2], [0.0, 0.0, 0.7]]).unwrap();
        let truth = matmul(&mix.transpose(), &mix).unwrap();
        let mut x = gaussian(425, &[0.0; 3], &mix, &mut rng);
        for _ in 0..75 {
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(8.0..12.0)).collect();
            x.push_row(&r).unwrap();
        }
        let m = ee_fit(&x, 0.1, 0.8, 3).unwrap();
        let empirical = covariance(&x, &column_means(&x), 1);
        let robust_err = frobenius_norm(&m.covariance().sub(&truth).unwrap());
        let plain_err = frobenius_norm(&empirical.sub(&truth).unwrap());
        assert!(robust_err < plain_err, "{robust_err} vs {plain_err}");
        assert!(robust_err < 0.5, "{robust_err}");
    }

    #[test]
    fn one_dimensional_threshold_is_z_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DenseMatrix::from_fn(200, 1, |_, _| 4.0 + 2.0 * { let z: f64 = StandardNormal.sample(&mut rng); z });
        let m = ee_fit(&x, 0.1, 0.8, 0).unwrap();
        let var = m.covariance()[(0, 0)];
        let z2: Vec<f64> = x.row_iter().map(|r| (r[0] - m.center()[0]).powi(2) / var).collect();
        for (r, z) in x.row_iter().zip(&z2) {
            assert!((m.score(r).unwrap() - z).abs() <= 1e-9 * z.max(1.0));
        }
        assert_eq!(m.threshold(), contamination_threshold(&z2, 0.1).unwrap());
    }

    #[test]
    fn score_identities_and_inverse_oracle() {
        let m = EeModel::from_parts(vec![1.0, 2.0], DenseMatrix::identity(2), 1.0).unwrap();
        assert_eq!(m.score(&[1.0, 2.0]).unwrap(), 0.0);
        assert!((m.score(&[4.0, -2.0]).unwrap() - 25.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let spd = matmul(&a, &a.transpose()).unwrap();
        let spd = DenseMatrix::from_fn(4, 4, |i, j| spd[(i, j)] + if i == j { 0.5 } else { 0.0 });
        let mu = vec![0.3, -0.2, 1.0, 0.0];
        let m = EeModel::from_parts(mu.clone(), spd.clone(), 1.0).unwrap();
        let inv = invert(&spd);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d: Vec<f64> = x.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let expect: f64 = (0..4).map(|i| (0..4).map(|j| d[i] * inv[(i, j)] * d[j]).sum::<f64>()).sum();
            assert!((m.score(&x).unwrap() - expect).abs() <= 1e-8 * expect.max(1.0));
        }
    }

    #[test]
    fn singular_data_is_regularized() {
        let x = DenseMatrix::from_fn(30, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        let m = ee_fit(&x, 0.1, 0.8, 0).unwrap();
        assert!(m.is_regularized());
        assert!(m.score(&[1.0, 2.0]).unwrap().is_finite());
    }

    #[test]
    fn deterministic_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(50, &[0.0; 2], &DenseMatrix::identity(2), &mut rng);
        assert_eq!(ee_fit(&x, 0.1, 0.8, 9).unwrap(), ee_fit(&x, 0.1, 0.8, 9).unwrap());
        assert!(ee_fit(&x.select_rows(&[0, 1, 2, 3]), 0.1, 0.8, 0).is_err());
        assert!(ee_fit(&x, 0.1, 0.3, 0).is_err());
        assert!(ee_fit(&x, 0.1, 0.8, 0).unwrap().score(&[0.0]).is_err());
    }
}
