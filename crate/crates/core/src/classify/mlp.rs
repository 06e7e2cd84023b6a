//! One-hidden-layer perceptron: ReLU hidden units, logistic output, binary
//! cross-entropy, mini-batch SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_training;
use crate::data::Quality;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: 10, learning_rate: 1e-2, epochs: 500, batch_size: 32, seed: 0 }
    }
}

impl MlpConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// hidden × d
    w1: DenseMatrix,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
    config: MlpConfig,
    /// Mean training loss after each epoch.
    #[serde(default)]
    loss_history: Vec<f64>,
}

/// Gradient of the mean loss, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpGradient {
    /// Flattened in [`MlpModel::params`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.w1.as_slice().to_vec();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of logit `z` against target `t`, stable for large |z|.
fn bce_from_logit(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

fn target(l: Quality) -> f64 {
    if l == Quality::Good {
        1.0
    } else {
        0.0
    }
}

impl MlpModel {
    /// Untrained network with seeded uniform weights in ±1/√fan_in.
    pub fn init(d: usize, config: &MlpConfig) -> Result<Self> {
        if d == 0 || config.hidden == 0 {
            return Err(Error::InvalidParameter("input and hidden sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let a1 = 1.0 / (d as f64).sqrt();
        let a2 = 1.0 / (config.hidden as f64).sqrt();
        let w1 = DenseMatrix::from_fn(config.hidden, d, |_, _| rng.random_range(-a1..a1));
        let b1 = (0..config.hidden).map(|_| rng.random_range(-a1..a1)).collect();
        let w2 = (0..config.hidden).map(|_| rng.random_range(-a2..a2)).collect();
        let b2 = rng.random_range(-a2..a2);
        Ok(MlpModel { w1, b1, w2, b2, config: config.clone(), loss_history: Vec::new() })
    }

    pub fn fit(x: &DenseMatrix, y: &[Quality], config: &MlpConfig) -> Result<Self> {
        check_training(x, y)?;
        if config.batch_size == 0 || !(config.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("batch_size and learning_rate must be positive".into()));
        }
        let mut model = Self::init(x.cols(), config)?;
        let t: Vec<f64> = y.iter().map(|&l| target(l)).collect();
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let xb = x.select_rows(batch);
                let tb: Vec<f64> = batch.iter().map(|&i| t[i]).collect();
                let (loss, g) = model.loss_and_gradient(&xb, &tb)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                model.step(&g, config.learning_rate);
            }
            let loss = model.mean_loss(x, &t)?;
            if !loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            model.loss_history.push(loss);
        }
        Ok(model)
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .row_iter()
            .zip(&self.b1)
            .map(|(w, b)| (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b).max(0.0))
            .collect()
    }

    fn logit(&self, h: &[f64]) -> f64 {
        h.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2
    }

    /// Probability of `Good`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w1.cols() {
            return Err(Error::dims(self.w1.cols(), x.len()));
        }
        Ok(sigmoid(self.logit(&self.hidden(x))))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Quality> {
        Ok(if self.predict_proba(x)? > 0.5 { Quality::Good } else { Quality::Bad })
    }

    /// Mean cross-entropy over rows of `x` against 0/1 targets.
    pub fn mean_loss(&self, x: &DenseMatrix, t: &[f64]) -> Result<f64> {
        if x.rows() != t.len() || x.cols() != self.w1.cols() {
            return Err(Error::dims(format!("{}x{} inputs", t.len(), self.w1.cols()), format!("{:?}", x.shape())));
        }
        Ok(x.row_iter().zip(t).map(|(r, &ti)| bce_from_logit(self.logit(&self.hidden(r)), ti)).sum::<f64>()
            / t.len() as f64)
    }

    /// Mean loss over the batch and its analytic gradient.
    pub fn loss_and_gradient(&self, x: &DenseMatrix, t: &[f64]) -> Result<(f64, MlpGradient)> {
        let loss = self.mean_loss(x, t)?;
        let (h, d) = (self.w1.rows(), self.w1.cols());
        let mut g = MlpGradient { w1: DenseMatrix::zeros(h, d), b1: vec![0.0; h], w2: vec![0.0; h], b2: 0.0 };
        let scale = 1.0 / t.len() as f64;
        for (r, &ti) in x.row_iter().zip(t) {
            let a = self.hidden(r);
            let dz = (sigmoid(self.logit(&a)) - ti) * scale;
            g.b2 += dz;
            for j in 0..h {
                g.w2[j] += dz * a[j];
                if a[j] > 0.0 {
                    let dh = dz * self.w2[j];
                    g.b1[j] += dh;
                    for (gw, xv) in g.w1.row_mut(j).iter_mut().zip(r) {
                        *gw += dh * xv;
                    }
                }
            }
        }
        Ok((loss, g))
    }

    fn step(&mut self, g: &MlpGradient, lr: f64) {
        for (w, gw) in self.w1.as_mut_slice().iter_mut().zip(g.w1.as_slice()) {
            *w -= lr * gw;
        }
        for (b, gb) in self.b1.iter_mut().zip(&g.b1) {
            *b -= lr * gb;
        }
        for (w, gw) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * gw;
        }
        self.b2 -= lr * g.b2;
    }

    /// All parameters flattened: W1 row-major, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.w1.as_slice().to_vec();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let (h, d) = (self.w1.rows(), self.w1.cols());
        let expected = h * d + 2 * h + 1;
        if p.len() != expected {
            return Err(Error::dims(expected, p.len()));
        }
        self.w1.as_mut_slice().copy_from_slice(&p[..h * d]);
        self.b1.copy_from_slice(&p[h * d..h * d + h]);
        self.w2.copy_from_slice(&p[h * d + h..h * d + 2 * h]);
        self.b2 = p[expected - 1];
        Ok(())
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }
}

pub fn mlp_fit(x: &DenseMatrix, y: &[Quality], config: &MlpConfig) -> Result<MlpModel> {
    MlpModel::fit(x, y, config)
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `eps`, over every parameter.
pub fn gradient_check(model: &MlpModel, x: &DenseMatrix, t: &[f64], eps: f64) -> Result<f64> {
    let analytic = model.loss_and_gradient(x, t)?.1.flatten();
    let base = model.params();
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + eps;
        probe.set_params(&p)?;
        let up = probe.mean_loss(x, t)?;
        p[i] = base[i] - eps;
        probe.set_params(&p)?;
        let down = probe.mean_loss(x, t)?;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
