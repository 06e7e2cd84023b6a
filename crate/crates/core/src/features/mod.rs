//! Deterministic feature engineering for series and spectra.
//!
//! Degenerate statistics (zero variance, zero mean) never raise: they
//! evaluate to the sentinel 0 and set a quality flag instead.

pub(crate) mod stats;
mod xafs;
mod xpcs;

use serde::{Deserialize, Serialize};

use crate::data::ChannelKind;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub use stats::{mean, median, quantile, std_dev};
pub use xafs::{
    downsample_spectrum, forward_difference, xafs_feature_names, xafs_features, XafsFeatureVector,
    XAFS_FEATURE_COUNT, XAFS_LENGTH, XAFS_SCHEMA_VERSION,
};
pub use xpcs::{
    xpcs_feature_names, xpcs_features, XpcsFeatureVector, XPCS_FEATURE_COUNT, XPCS_SCHEMA_VERSION,
};

/// Versioned feature schema descriptors shipped with the crate.
pub const XPCS_SCHEMA_JSON: &str = include_str!("../../schema/xpcs_features.v1.json");
pub const XAFS_SCHEMA_JSON: &str = include_str!("../../schema/xafs_features.v1.json");

/// Centers a channel on its mean; intensity-like channels are further
/// divided by the mean.
///
/// Returns the processed series and whether the zero-mean guard fired (an
/// intensity-like channel with mean 0 is only centered).
pub fn preprocess_channel(series: &[f64], kind: ChannelKind) -> Result<(Vec<f64>, bool)> {
    if series.len() < 2 {
        return Err(Error::InsufficientData { required: 2, actual: series.len() });
    }
    let m = mean(series);
    let centered = series.iter().map(|x| x - m);
    match kind {
        ChannelKind::PositionLike => Ok((centered.collect(), false)),
        ChannelKind::IntensityLike if m == 0.0 => Ok((centered.collect(), true)),
        ChannelKind::IntensityLike => Ok((centered.map(|x| x / m).collect(), false)),
    }
}

/// Pearson correlation between `series[..n−lag]` and `series[lag..]`.
///
/// Returns `(0, true)` when either overlap has zero variance.
pub fn autocorr(series: &[f64], lag: usize) -> Result<(f64, bool)> {
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    if lag >= series.len() {
        return Err(Error::InvalidParameter(format!(
            "lag {lag} must be smaller than the series length {}",
            series.len()
        )));
    }
    let a = &series[..series.len() - lag];
    let b = &series[lag..];
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), false))
}

/// Per-feature training maxima of absolute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    maxima: Vec<f64>,
}

impl FeatureNormalizer {
    /// Features that are zero across all of training get divisor 1.
    pub fn fit(train: &DenseMatrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::InsufficientData { required: 1, actual: 0 });
        }
        let mut maxima = vec![0.0_f64; train.cols()];
        for r in train.row_iter() {
            for (m, v) in maxima.iter_mut().zip(r) {
                *m = m.max(v.abs());
            }
        }
        for m in &mut maxima {
            if *m == 0.0 {
                *m = 1.0;
            }
        }
        Ok(FeatureNormalizer { maxima })
    }

    pub fn maxima(&self) -> &[f64] {
        &self.maxima
    }

    pub fn dim(&self) -> usize {
        self.maxima.len()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.maxima.len() {
            return Err(Error::dims(self.maxima.len(), v.len()));
        }
        Ok(v.iter().zip(&self.maxima).map(|(x, m)| x / m).collect())
    }

    pub fn apply_matrix(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(0, x.cols());
        for r in x.row_iter() {
            out.push_row(&self.apply(r)?)?;
        }
        Ok(out)
    }
}

pub fn fit_normalizer(train: &DenseMatrix) -> Result<FeatureNormalizer> {
    FeatureNormalizer::fit(train)
}

pub fn apply_normalizer(norm: &FeatureNormalizer, v: &[f64]) -> Result<Vec<f64>> {
    norm.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn preprocess_examples() {
        let (p, flag) = preprocess_channel(&[4.0; 7], ChannelKind::IntensityLike).unwrap();
        assert!(p.iter().all(|x| *x == 0.0) && !flag);
        assert_eq!(preprocess_channel(&[1.0, 3.0], ChannelKind::IntensityLike).unwrap().0, vec![-0.5, 0.5]);
        assert_eq!(preprocess_channel(&[10.0, 12.0], ChannelKind::PositionLike).unwrap().0, vec![-1.0, 1.0]);
        let (p, flag) = preprocess_channel(&[-1.0, 1.0], ChannelKind::IntensityLike).unwrap();
        assert!(flag);
        assert_eq!(p, vec![-1.0, 1.0]);
        assert!(preprocess_channel(&[1.0], ChannelKind::PositionLike).is_err());
    }

    #[test]
    fn autocorr_examples() {
        let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(autocorr(&alt, 2).unwrap(), (1.0, false));
        assert_eq!(autocorr(&alt, 1).unwrap(), (-1.0, false));
        assert_eq!(autocorr(&[3.0; 8], 1).unwrap(), (0.0, true));
        assert!(autocorr(&alt, 20).is_err());
        assert!(autocorr(&alt, 0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(autocorr(&noise, 1).unwrap().0.abs() < 0.1);
    }

    #[test]
    fn normalizer_examples() {
        let train = DenseMatrix::from_rows(&[[1.0, -4.0, 0.0], [-2.0, 3.0, 0.0]]).unwrap();
        let norm = fit_normalizer(&train).unwrap();
        assert_eq!(norm.maxima(), &[2.0, 4.0, 1.0]);
        assert_eq!(apply_normalizer(&norm, &[-2.0, 3.0, 0.0]).unwrap(), vec![-1.0, 0.75, 0.0]);
        assert_eq!(norm.apply(&[1.0, -4.0, 0.0]).unwrap()[1], -1.0);
        let scaled: Vec<f64> = train.row(0).iter().map(|x| 2.0 * x).collect();
        let a = norm.apply(train.row(0)).unwrap();
        let b = norm.apply(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(norm.apply(&[1.0]).is_err());
        assert!(fit_normalizer(&DenseMatrix::zeros(0, 3)).is_err());
    }
}
