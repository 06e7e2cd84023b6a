//! Down-sampling and the frozen 20-slot feature schema for XAFS spectra.

use serde::{Deserialize, Serialize};

use super::autocorr;
use super::stats::{argmax, mean, std_dev};
use crate::data::Spectrum1D;
use crate::error::{Error, Result};

pub const XAFS_SCHEMA_VERSION: &str = "xafs-features/1";
pub const XAFS_FEATURE_COUNT: usize = 20;
/// Every spectrum is resampled to this many points before featurization.
pub const XAFS_LENGTH: usize = 400;

const PARTS: [&str; 2] = ["intensity", "derivative"];
const PER_PART: [&str; 10] = [
    "autocorr_lag1",
    "autocorr_lag2",
    "autocorr_lag3",
    "autocorr_lag4",
    "mean_first5",
    "mean_last5",
    "mean",
    "std",
    "sum",
    "argmax_fraction",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XafsFeatureVector {
    pub schema_version: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub flags: Vec<String>,
}

pub fn xafs_feature_names() -> Vec<String> {
    PARTS
        .iter()
        .flat_map(|p| PER_PART.iter().map(move |s| format!("{p}.{s}")))
        .collect()
}

/// Linear interpolation onto `target` uniformly spaced points spanning the
/// original grid. The two endpoints are copied exactly.
pub fn downsample_spectrum(s: &Spectrum1D, target: usize) -> Result<Spectrum1D> {
    if target < 2 {
        return Err(Error::InvalidParameter(format!("target length must be at least 2, got {target}")));
    }
    let (g, y) = (s.grid(), s.intensity());
    let (lo, hi) = (g[0], g[g.len() - 1]);
    let step = (hi - lo) / (target - 1) as f64;

    let mut grid = Vec::with_capacity(target);
    let mut out = Vec::with_capacity(target);
    let mut seg = 0;
    for i in 0..target {
        let x = if i == target - 1 { hi } else { lo + step * i as f64 };
        while seg + 2 < g.len() && g[seg + 1] < x {
            seg += 1;
        }
        let v = if i == 0 {
            y[0]
        } else if i == target - 1 {
            y[y.len() - 1]
        } else {
            let t = (x - g[seg]) / (g[seg + 1] - g[seg]);
            y[seg] + t * (y[seg + 1] - y[seg])
        };
        grid.push(x);
        out.push(v);
    }
    let mut r = Spectrum1D::new(grid, out)?.with_label(s.label());
    for (k, v) in s.meta() {
        r = r.with_meta(k.clone(), *v);
    }
    Ok(r)
}

/// First forward difference, padded by repeating its last value so the output
/// has the input's length.
pub fn forward_difference(x: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(&last) = d.last() {
        d.push(last);
    }
    d
}

fn part_features(x: &[f64], part: &str, flags: &mut Vec<String>) -> [f64; 10] {
    let n = x.len();
    let mut out = [0.0; 10];
    for lag in 1..=4 {
        let (r, flagged) = autocorr(x, lag).unwrap_or((0.0, true));
        if flagged {
            flags.push(format!("{part}.{}", PER_PART[lag - 1]));
        }
        out[lag - 1] = r;
    }
    out[4] = mean(&x[..5]);
    out[5] = mean(&x[n - 5..]);
    out[6] = mean(x);
    out[7] = std_dev(x);
    out[8] = x.iter().sum();
    out[9] = argmax(x) as f64 / (n - 1) as f64;
    out
}

/// Computes the 20 features of a spectrum that has already been resampled
/// to [`XAFS_LENGTH`] points.
pub fn xafs_features(s: &Spectrum1D) -> Result<XafsFeatureVector> {
    if s.len() != XAFS_LENGTH {
        return Err(Error::dims(
            format!("{XAFS_LENGTH} points (resample first)"),
            s.len(),
        ));
    }
    let x = s.intensity();
    let d = forward_difference(x);
    let mut flags = Vec::new();
    let mut values = Vec::with_capacity(XAFS_FEATURE_COUNT);
    values.extend_from_slice(&part_features(x, PARTS[0], &mut flags));
    values.extend_from_slice(&part_features(&d, PARTS[1], &mut flags));
    Ok(XafsFeatureVector { schema_version: XAFS_SCHEMA_VERSION.to_string(), values, flags })
}
