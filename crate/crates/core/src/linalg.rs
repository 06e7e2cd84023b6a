//! Small dense linear algebra: products, Jacobi eigensolver, Cholesky.
//!
//! Everything here operates on matrices of at most a few hundred rows, so the
//! routines favour clarity over blocking or vectorisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Off-diagonal mass (relative to `‖S‖_F`) below which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative ridge added to the diagonal when a covariance fails Cholesky.
pub const RIDGE_EPSILON: f64 = 1e-9;

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::dims(
            format!("left operand with {} columns", b.rows()),
            format!("{} columns", a.cols()),
        ));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(n, m);
    let bs = b.as_slice();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &aip) in arow.iter().enumerate().take(k) {
            if aip == 0.0 {
                continue;
            }
            let brow = &bs[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

pub fn transpose(a: &DenseMatrix) -> DenseMatrix {
    a.transpose()
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricEigen {
    /// Sorted in descending order.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: DenseMatrix,
}

fn check_symmetric(s: &DenseMatrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::dims("square matrix", format!("{:?}", s.shape())));
    }
    let n = s.rows();
    let tol = 1e-10 * s.max_abs().max(1.0);
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if worst > tol {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps over every upper-triangular pair until the off-diagonal Frobenius
/// mass drops below [`JACOBI_TOLERANCE`] times `‖S‖_F`.
pub fn sym_eigen(s: &DenseMatrix) -> Result<SymmetricEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    // work on the exactly-symmetrised copy
    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let scale = frobenius_norm(&a);

    let off_diagonal = |a: &DenseMatrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[(i, j)] * a[(i, j)];
                }
            }
        }
        acc.sqrt()
    };

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal(&a) <= JACOBI_TOLERANCE * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal(&a) > JACOBI_TOLERANCE * scale {
        return Err(Error::NoConvergence {
            algorithm: "jacobi eigensolver",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S`.
pub fn cholesky(s: &DenseMatrix) -> Result<DenseMatrix> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut acc = s[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / djj;
        }
    }
    Ok(l)
}

/// Cholesky with the ridge fallback used by covariance estimators.
///
/// When `S` itself is not positive definite, retries with
/// `S + εI`, `ε = 1e-9·trace(S)/dim`, growing `ε` tenfold on each further
/// failure. Returns the factor, the (possibly ridged) matrix and whether a
/// ridge was needed.
pub fn cholesky_regularized(s: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, bool)> {
    match cholesky(s) {
        Ok(l) => return Ok((l, s.clone(), false)),
        Err(Error::NotPositiveDefinite { .. }) => {}
        Err(e) => return Err(e),
    }
    let n = s.rows();
    let base = s.trace().abs() / n.max(1) as f64;
    let mut eps = RIDGE_EPSILON * if base > 0.0 { base } else { 1.0 };
    for _ in 0..12 {
        let mut ridged = s.clone();
        for i in 0..n {
            ridged[(i, i)] += eps;
        }
        if let Ok(l) = cholesky(&ridged) {
            return Ok((l, ridged, true));
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn backward_substitute(l: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l[(k, i)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

/// Solves `S x = b` for symmetric positive-definite `S`.
pub fn solve_spd(s: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != s.rows() {
        return Err(Error::dims(s.rows(), b.len()));
    }
    let l = cholesky(s)?;
    Ok(backward_substitute(&l, &forward_substitute(&l, b)))
}

/// `log det S` from a Cholesky factor of `S`.
pub fn log_det_from_cholesky(l: &DenseMatrix) -> f64 {
    2.0 * (0..l.rows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn column_means(x: &DenseMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = x.rows().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Sample covariance of the rows of `x` about `mean` with divisor `n − ddof`.
pub fn covariance(x: &DenseMatrix, mean: &[f64], ddof: usize) -> DenseMatrix {
    let d = x.cols();
    let mut cov = DenseMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in x.row_iter() {
        for ((c, v), m) in centered.iter_mut().zip(r).zip(mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            let row = cov.row_mut(i);
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    let denom = (x.rows().saturating_sub(ddof)).max(1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}
