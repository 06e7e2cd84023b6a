//! Dataset splitting protocols.
//!
//! Sizes are rounded half-up; leftovers go to validation before test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    /// All indices, train then validation then test.
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.validation).chain(&self.test).copied()
    }
}

/// `round(x)` with halves rounded up, tolerant of representation error
/// (e.g. `0.9 · 5` lands on 4.5).
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {f}")));
    }
    Ok(())
}

fn shuffled(mut v: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    v.shuffle(rng);
    v
}

fn check_unique(indices: &[usize]) -> Result<()> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidData(format!("index {} appears twice", w[0])));
    }
    Ok(())
}

/// Random train/validation split of `0..n`.
pub fn split_uniform(n: usize, train_frac: f64, seed: u64) -> Result<SplitAssignment> {
    check_fraction("train_frac", train_frac)?;
    if n < 2 {
        return Err(Error::InsufficientData { required: 2, actual: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = shuffled((0..n).collect(), &mut rng);
    let n_train = round_half_up(train_frac * n as f64).clamp(1, n - 1);
    Ok(SplitAssignment {
        train: order[..n_train].to_vec(),
        validation: order[n_train..].to_vec(),
        test: Vec::new(),
    })
}

/// Novelty-detection split: train on 80% of normals only; validation gets
/// 10% of normals plus half the anomalies; test gets the rest.
pub fn split_anomaly(normals: &[usize], anomalies: &[usize], seed: u64) -> Result<SplitAssignment> {
    if normals.len() < 5 {
        return Err(Error::InsufficientData { required: 5, actual: normals.len() });
    }
    if anomalies.len() < 2 {
        return Err(Error::InsufficientData { required: 2, actual: anomalies.len() });
    }
    let mut all = normals.to_vec();
    all.extend_from_slice(anomalies);
    check_unique(&all)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = shuffled(normals.to_vec(), &mut rng);
    let anomalies = shuffled(anomalies.to_vec(), &mut rng);

    let n_train = round_half_up(0.8 * normals.len() as f64);
    let rest = normals.len() - n_train;
    let n_val_normal = rest - rest / 2;
    let n_val_anomalous = anomalies.len() - anomalies.len() / 2;

    let mut validation = normals[n_train..n_train + n_val_normal].to_vec();
    validation.extend_from_slice(&anomalies[..n_val_anomalous]);
    let mut test = normals[n_train + n_val_normal..].to_vec();
    test.extend_from_slice(&anomalies[n_val_anomalous..]);
    Ok(SplitAssignment {
        train: normals[..n_train].to_vec(),
        validation,
        test,
    })
}

/// Generalisation split: the whole holdout group goes to validation, plus a
/// `val_frac_of_rest` sample of everything else.
///
/// With an empty holdout this is exactly `split_uniform(n, 1 − val_frac_of_rest, seed)`.
pub fn split_unique(
    n: usize,
    holdout: &[usize],
    val_frac_of_rest: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    check_fraction("val_frac_of_rest", val_frac_of_rest)?;
    check_unique(holdout)?;
    if let Some(&bad) = holdout.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidData(format!("holdout index {bad} out of range 0..{n}")));
    }
    if holdout.len() >= n {
        return Err(Error::InvalidParameter("holdout covers every index; nothing left to train on".into()));
    }
    let mut in_holdout = vec![false; n];
    holdout.iter().for_each(|&i| in_holdout[i] = true);
    let rest: Vec<usize> = (0..n).filter(|&i| !in_holdout[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = shuffled(rest, &mut rng);
    let n_train = if rest.len() >= 2 {
        round_half_up((1.0 - val_frac_of_rest) * rest.len() as f64).clamp(1, rest.len() - 1)
    } else {
        rest.len()
    };
    let mut validation = holdout.to_vec();
    validation.extend_from_slice(&rest[n_train..]);
    Ok(SplitAssignment {
        train: rest[..n_train].to_vec(),
        validation,
        test: Vec::new(),
    })
}
