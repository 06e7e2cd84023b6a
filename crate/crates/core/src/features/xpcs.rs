//! The frozen 93-slot feature schema for XPCS run summaries.

use serde::{Deserialize, Serialize};

use super::stats::{diff, mean, sorted_quantile, std_dev, trend_slope};
use super::{autocorr, preprocess_channel};
use crate::data::{Channel, TimeSeriesBundle};

pub const XPCS_SCHEMA_VERSION: &str = "xpcs-features/1";
pub const XPCS_FEATURE_COUNT: usize = 93;

const PER_CHANNEL: [&str; 15] = [
    "std_mean_ratio",
    "autocorr_lag1",
    "autocorr_lag2",
    "autocorr_lag3",
    "autocorr_lag4",
    "std_to_diff_std",
    "end_minus_begin",
    "mean_abs_diff",
    "max_abs_dev_median",
    "trend_slope",
    "outlier_fraction",
    "half_std_ratio",
    "range_to_std",
    "median",
    "iqr",
];

const GLOBAL: [&str; 3] = ["log_length", "intensity_begin_end_ratio", "flagged_channel_count"];

/// Edge window for the begin/end statistics.
const EDGE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpcsFeatureVector {
    pub schema_version: String,
    pub values: Vec<f64>,
    /// Names of features whose degenerate-input guard fired.
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Feature names in schema order: `<channel>.<statistic>` then the globals.
pub fn xpcs_feature_names() -> Vec<String> {
    let mut names: Vec<String> = Channel::ALL
        .iter()
        .flat_map(|c| PER_CHANNEL.iter().map(move |s| format!("{}.{s}", c.name())))
        .collect();
    names.extend(GLOBAL.iter().map(|s| s.to_string()));
    names
}

fn guarded_ratio(num: f64, den: f64, name: String, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(name);
        0.0
    } else {
        num / den
    }
}

fn channel_features(x: &[f64], prefix: &str, flags: &mut Vec<String>) -> [f64; 15] {
    let name = |s: &str| format!("{prefix}.{s}");
    let n = x.len();
    let sd = std_dev(x);
    let dx = diff(x);
    let m = mean(x);

    let mut out = [0.0; 15];
    out[0] = sd;
    for lag in 1..=4 {
        let (r, flagged) = autocorr(x, lag).unwrap_or((0.0, true));
        if flagged {
            flags.push(name(PER_CHANNEL[lag]));
        }
        out[lag] = r;
    }
    out[5] = guarded_ratio(sd, std_dev(&dx), name(PER_CHANNEL[5]), flags);
    let edge = EDGE.min(n);
    out[6] = mean(&x[n - edge..]) - mean(&x[..edge]);
    out[7] = dx.iter().map(|d| d.abs()).sum::<f64>() / dx.len() as f64;

    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = sorted_quantile(&sorted, 0.5);
    out[8] = x.iter().map(|v| (v - med).abs()).fold(0.0, f64::max);
    out[9] = trend_slope(x);
    out[10] = if sd == 0.0 {
        0.0
    } else {
        x.iter().filter(|v| (*v - m).abs() > 3.0 * sd).count() as f64 / n as f64
    };
    let half = n / 2;
    out[11] = guarded_ratio(std_dev(&x[..half]), std_dev(&x[half..]), name(PER_CHANNEL[11]), flags);
    out[12] = guarded_ratio(sorted[n - 1] - sorted[0], sd, name(PER_CHANNEL[12]), flags);
    out[13] = med;
    out[14] = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
    out
}

/// Computes the 93 features of a bundle. Never fails: degenerate statistics
/// become 0 and are listed in `flags`.
pub fn xpcs_features(bundle: &TimeSeriesBundle) -> XpcsFeatureVector {
    let mut values = Vec::with_capacity(XPCS_FEATURE_COUNT);
    let mut flags = Vec::new();
    let mut flagged_channels = 0usize;

    for c in Channel::ALL {
        let before = flags.len();
        let raw = bundle.channel(c);
        let (x, mean_guard) = preprocess_channel(raw, c.kind()).unwrap_or_else(|_| (vec![0.0; raw.len()], true));
        if mean_guard {
            flags.push(format!("{}.preprocess", c.name()));
        }
        values.extend_from_slice(&channel_features(&x, c.name(), &mut flags));
        if flags.len() > before {
            flagged_channels += 1;
        }
    }

    let total = bundle.channel(Channel::TotalIntensity);
    let edge = EDGE.min(total.len());
    values.push((total.len() as f64).ln());
    values.push(guarded_ratio(
        mean(&total[..edge]),
        mean(&total[total.len() - edge..]),
        GLOBAL[1].to_string(),
        &mut flags,
    ));
    values.push(flagged_channels as f64);

    debug_assert_eq!(values.len(), XPCS_FEATURE_COUNT);
    debug_assert!(values.iter().all(|v| v.is_finite()));
    XpcsFeatureVector { schema_version: XPCS_SCHEMA_VERSION.to_string(), values, flags }
}
