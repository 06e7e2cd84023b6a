//! Principal component analysis via the symmetric eigendecomposition of the
//! sample covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_means, covariance, sym_eigen};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// k × d, orthonormal rows.
    components: DenseMatrix,
    explained_variance: Vec<f64>,
    /// Set when the training data had zero total variance; the basis is then
    /// arbitrary.
    #[serde(default)]
    zero_variance: bool,
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl PcaModel {
    pub fn fit(x: &DenseMatrix, k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::InsufficientData { required: 2, actual: n });
        }
        if k == 0 || k > n.min(d) {
            return Err(Error::InvalidParameter(format!(
                "n_components must lie in 1..={}, got {k}",
                n.min(d)
            )));
        }
        let mean = column_means(x);
        let cov = covariance(x, &mean, 1);
        let eig = sym_eigen(&cov)?;

        let mut components = DenseMatrix::zeros(0, d);
        for j in 0..k {
            let mut v = eig.eigenvectors.column(j);
            canonical_sign(&mut v);
            components.push_row(&v)?;
        }
        let explained_variance: Vec<f64> = eig.eigenvalues[..k].iter().map(|l| l.max(0.0)).collect();
        let zero_variance = cov.trace() == 0.0;
        Ok(PcaModel { mean, components, explained_variance, zero_variance })
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &DenseMatrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn is_zero_variance(&self) -> bool {
        self.zero_variance
    }

    /// Scores of one row: `(x − mean)·Cᵀ`.
    pub fn transform_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dims(self.dim(), x.len()));
        }
        Ok(self
            .components
            .row_iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    pub fn transform(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(0, self.n_components());
        for r in x.row_iter() {
            out.push_row(&self.transform_row(r)?)?;
        }
        Ok(out)
    }

    /// Maps scores back to feature space: `s·C + mean`.
    pub fn inverse_transform_row(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.n_components() {
            return Err(Error::dims(self.n_components(), scores.len()));
        }
        let mut out = self.mean.clone();
        for (s, c) in scores.iter().zip(self.components.row_iter()) {
            for (o, cj) in out.iter_mut().zip(c) {
                *o += s * cj;
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, scores: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(0, self.dim());
        for r in scores.row_iter() {
            out.push_row(&self.inverse_transform_row(r)?)?;
        }
        Ok(out)
    }
}

pub fn pca_fit(x: &DenseMatrix, k: usize) -> Result<PcaModel> {
    PcaModel::fit(x, k)
}

pub fn pca_transform(model: &PcaModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    model.transform(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // correlated columns so the spectrum is well separated
        let mix = DenseMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let z = DenseMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        matmul(&z, &mix).unwrap()
    }

    fn column_variance(x: &DenseMatrix, j: usize) -> f64 {
        let c = x.column(j);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (c.len() - 1) as f64
    }

    /// Power iteration with deflation on `XcᵀXc/(n−1)` formed by matmul.
    fn power_oracle(x: &DenseMatrix, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mean = column_means(x);
        let xc = DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - mean[j]);
        let mut s = matmul(&xc.transpose(), &xc).unwrap().scale(1.0 / (x.rows() - 1) as f64);
        let d = s.rows();
        let (mut vals, mut vecs) = (Vec::new(), Vec::new());
        for _ in 0..k {
            let mut v = vec![1.0; d];
            let mut lambda = 0.0;
            for _ in 0..20000 {
                let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| s[(i, j)] * v[j]).sum()).collect();
                let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
                v = w.iter().map(|a| a / norm).collect();
                lambda = norm;
            }
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] -= lambda * v[i] * v[j];
                }
            }
            vals.push(lambda);
            vecs.push(v);
        }
        (vals, vecs)
    }

    #[test]
    fn collinear_points() {
        let x = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]]).unwrap();
        let m = pca_fit(&x, 2).unwrap();
        let h = 0.5_f64.sqrt();
        assert!((m.components()[(0, 0)] - h).abs() < 1e-10);
        assert!((m.components()[(0, 1)] - h).abs() < 1e-10);
        assert!(m.explained_variance()[1].abs() < 1e-12);
    }

    #[test]
    fn isotropic_variances_are_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DenseMatrix::from_fn(10_000, 4, |_, _| StandardNormal.sample(&mut rng));
        let v = pca_fit(&x, 4).unwrap().explained_variance().to_vec();
        assert!(v[0] / v[3] < 1.1, "{v:?}");
    }

    #[test]
    fn full_rank_round_trip_and_mean_maps_to_zero() {
        let x = random(30, 5, 1);
        let m = pca_fit(&x, 5).unwrap();
        let back = m.inverse_transform(&m.transform(&x).unwrap()).unwrap();
        assert!(back.sub(&x).unwrap().max_abs() < 1e-8);
        let z = m.transform_row(m.mean()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn score_variances_and_discarded_energy() {
        let x = random(40, 6, 2);
        let full = pca_fit(&x, 6).unwrap();
        let m = pca_fit(&x, 3).unwrap();
        let scores = m.transform(&x).unwrap();
        for j in 0..3 {
            assert!((column_variance(&scores, j) - m.explained_variance()[j]).abs() < 1e-8);
        }
        let back = m.inverse_transform(&scores).unwrap();
        let err = back.sub(&x).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>() / (x.rows() - 1) as f64;
        let discarded: f64 = full.explained_variance()[3..].iter().sum();
        assert!((err - discarded).abs() <= 1e-6 * discarded);
    }

    #[test]
    fn orthonormal_and_variance_conserved() {
        let x = random(25, 6, 9);
        let m = pca_fit(&x, 6).unwrap();
        let c = m.components();
        let cct = matmul(c, &c.transpose()).unwrap();
        assert!(cct.sub(&DenseMatrix::identity(6)).unwrap().max_abs() <= 1e-8);
        let total: f64 = m.explained_variance().iter().sum();
        let trace = covariance(&x, &column_means(&x), 1).trace();
        assert!((total - trace).abs() <= 1e-8 * trace);
        assert!(m.explained_variance().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn matches_power_iteration_oracle() {
        for seed in 0..5 {
            let x = random(20, 6, 100 + seed);
            let m = pca_fit(&x, 6).unwrap();
            let (vals, vecs) = power_oracle(&x, 3);
            for j in 0..3 {
                assert!((m.explained_variance()[j] - vals[j]).abs() <= 1e-8 * vals[0], "seed {seed} λ{j}");
                let dot: f64 = m.components().row(j).iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                assert!((dot.abs() - 1.0).abs() < 1e-6, "seed {seed} v{j}: {dot}");
            }
        }
    }

    #[test]
    fn sign_convention() {
        let x = random(15, 4, 5);
        let m = pca_fit(&x, 4).unwrap();
        for r in m.components().row_iter() {
            let big = r.iter().copied().fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
        let neg = x.scale(-1.0);
        let mn = pca_fit(&neg, 4).unwrap();
        assert!(mn.components().sub(m.components()).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn errors_and_degenerate_input() {
        let x = random(10, 3, 0);
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 4).is_err());
        assert!(pca_fit(&DenseMatrix::zeros(1, 3), 1).is_err());
        assert!(pca_fit(&x, 2).unwrap().transform_row(&[1.0]).is_err());
        let flat = DenseMatrix::from_fn(5, 3, |_, j| j as f64);
        let m = pca_fit(&flat, 3).unwrap();
        assert!(m.is_zero_variance());
        assert!(m.explained_variance().iter().all(|v| *v == 0.0));
        let c = m.components();
        assert!(matmul(c, &c.transpose()).unwrap().sub(&DenseMatrix::identity(3)).unwrap().max_abs() < 1e-12);
    }
}
