//! Seeded synthetic stand-ins for the beamline datasets, returned with
//! their ground truth.
//!
//! Three generators:
//! * [`gen_ramp`]: diffraction-like patterns through a temperature ramp with
//!   an abrupt phase switch,
//! * [`gen_xpcs`]: six-channel time series, normal or carrying a jump, drift
//!   or oscillation,
//! * [`gen_xafs`]: absorption spectra with an edge (good) or without (bad).
//!
//! [`xpcs_benchmark`] and [`xafs_benchmark`] build the canonical acceptance
//! datasets. Their noise levels are frozen together with [`CANONICAL_SEED`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Channel, Condition, Quality, Record, Spectrum1D, TimeSeriesBundle};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nmf::DEFAULT_META_KEY;

pub const CANONICAL_SEED: u64 = 7;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

// ---------------------------------------------------------------- ramp

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub peaks: Vec<Peak>,
}

impl Phase {
    pub fn pattern(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter()
            .map(|&x| {
                self.peaks
                    .iter()
                    .map(|p| p.height * (-0.5 * ((x - p.center) / p.width).powi(2)).exp())
                    .sum()
            })
            .collect()
    }
}

/// Temperature ramp through a set of phases.
///
/// Phase `j` has weight `before[j]` below `t_c` and `after[j]` at or above
/// it, plus `growth[j]` times the fractional position in the temperature
/// range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    pub temperatures: Vec<f64>,
    pub grid: Vec<f64>,
    pub phases: Vec<Phase>,
    pub t_c: f64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub growth: Vec<f64>,
    /// Gaussian noise σ as a fraction of each pattern's maximum.
    pub noise: f64,
}

impl Default for RampSpec {
    /// 50 temperatures from 27 to 690 °C, three phases, switch at 400 °C.
    fn default() -> Self {
        let pk = |center, width, height| Peak { center, width, height };
        RampSpec {
            temperatures: linspace(27.0, 690.0, 50),
            grid: linspace(1.0, 8.0, 300),
            phases: vec![
                Phase { peaks: vec![pk(2.0, 0.06, 1.0), pk(3.5, 0.08, 0.6), pk(5.2, 0.1, 0.4)] },
                Phase { peaks: vec![pk(2.45, 0.06, 0.9), pk(4.1, 0.08, 0.7), pk(6.1, 0.1, 0.3)] },
                Phase { peaks: vec![pk(3.0, 0.9, 0.25)] },
            ],
            t_c: 400.0,
            before: vec![1.0, 0.0, 0.2],
            after: vec![0.0, 1.0, 0.2],
            growth: vec![0.0, 0.0, 0.4],
            noise: 0.01,
        }
    }
}

impl RampSpec {
    /// Two phases with a step switch and no noise.
    pub fn two_phase() -> Self {
        let d = RampSpec::default();
        RampSpec {
            phases: d.phases[..2].to_vec(),
            before: vec![1.0, 0.0],
            after: vec![0.0, 1.0],
            growth: vec![0.0, 0.0],
            noise: 0.0,
            ..d
        }
    }

    /// One phase at constant weight and no noise: exactly rank one.
    pub fn single_phase() -> Self {
        let d = RampSpec::default();
        RampSpec {
            phases: d.phases[..1].to_vec(),
            before: vec![1.0],
            after: vec![1.0],
            growth: vec![0.0],
            noise: 0.0,
            ..d
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.phases.len();
        if p == 0 {
            return Err(Error::InvalidParameter("ramp needs at least one phase".into()));
        }
        if self.before.len() != p || self.after.len() != p || self.growth.len() != p {
            return Err(Error::InvalidParameter("one before/after/growth weight per phase".into()));
        }
        if self.before.iter().chain(&self.after).chain(&self.growth).any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("phase weights must be non-negative".into()));
        }
        if self.temperatures.len() < 2 || self.temperatures.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("temperatures must be at least 2 and strictly increasing".into()));
        }
        let (lo, hi) = (self.temperatures[0], self.temperatures[self.temperatures.len() - 1]);
        if !(self.t_c > lo && self.t_c <= hi) {
            return Err(Error::InvalidParameter(format!("t_c = {} must lie in ({lo}, {hi}]", self.t_c)));
        }
        if self.grid.len() < 2 {
            return Err(Error::InvalidParameter("ordinate grid needs at least 2 points".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidParameter("noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RampData {
    /// One pattern per temperature, carrying `temperature_C` metadata.
    pub spectra: Vec<Spectrum1D>,
    /// True weights, temperatures × phases.
    pub weights: DenseMatrix,
    /// Noise-free phase patterns, phases × grid.
    pub phases: DenseMatrix,
    /// Index of the first temperature at or above `t_c`.
    pub switch_index: usize,
}

/// Mixes the phase patterns by the spec's schedule. Noise is Gaussian with
/// σ relative to the pattern maximum; negative intensities are clipped to 0.
pub fn gen_ramp(spec: &RampSpec, seed: u64) -> Result<RampData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<Vec<f64>> = spec.phases.iter().map(|p| p.pattern(&spec.grid)).collect();
    let (t0, t1) = (spec.temperatures[0], spec.temperatures[spec.temperatures.len() - 1]);
    let switch_index = spec.temperatures.iter().position(|&t| t >= spec.t_c).expect("t_c validated inside grid");

    let mut weights = DenseMatrix::zeros(0, patterns.len());
    let mut spectra = Vec::with_capacity(spec.temperatures.len());
    for &t in &spec.temperatures {
        let frac = (t - t0) / (t1 - t0);
        let base = if t < spec.t_c { &spec.before } else { &spec.after };
        let w: Vec<f64> = base.iter().zip(&spec.growth).map(|(b, g)| b + g * frac).collect();
        let mut y = vec![0.0; spec.grid.len()];
        for (wj, pat) in w.iter().zip(&patterns) {
            y.iter_mut().zip(pat).for_each(|(a, b)| *a += wj * b);
        }
        let peak = y.iter().copied().fold(0.0, f64::max);
        if spec.noise > 0.0 {
            for v in &mut y {
                *v = (*v + spec.noise * peak * normal(&mut rng)).max(0.0);
            }
        }
        weights.push_row(&w)?;
        spectra.push(Spectrum1D::new(spec.grid.clone(), y)?.with_meta(DEFAULT_META_KEY, t));
    }
    Ok(RampData {
        spectra,
        weights,
        phases: DenseMatrix::from_rows(&patterns)?,
        switch_index,
    })
}

// ---------------------------------------------------------------- xpcs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    None,
    Jump,
    Drift,
    Oscillation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpcsSpec {
    /// Frame count drawn log-uniformly from this inclusive range.
    pub length_range: (usize, usize),
    pub kind: AnomalyKind,
    /// Anomaly size in units of the channel's noise σ.
    pub magnitude: f64,
    pub channels: Vec<Channel>,
}

impl XpcsSpec {
    pub fn normal() -> Self {
        XpcsSpec { length_range: (30, 3000), kind: AnomalyKind::None, magnitude: 0.0, channels: Vec::new() }
    }

    pub fn anomalous(kind: AnomalyKind, magnitude: f64, channels: Vec<Channel>) -> Self {
        XpcsSpec { kind, magnitude, channels, ..Self::normal() }
    }

    pub fn with_length(mut self, len: usize) -> Self {
        self.length_range = (len, len);
        self
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if lo < crate::data::MIN_SERIES_LENGTH || hi < lo {
            return Err(Error::InvalidParameter(format!("length range ({lo}, {hi}) is invalid")));
        }
        if self.kind != AnomalyKind::None {
            if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
                return Err(Error::InvalidParameter("anomalous kinds need a positive magnitude".into()));
            }
            if self.channels.is_empty() {
                return Err(Error::InvalidParameter("anomalous kinds need at least one channel".into()));
            }
        }
        Ok(())
    }
}

/// Baseline level and relative noise of each channel, in `Channel::ALL` order.
/// Position-like channels use absolute pixel noise.
const XPCS_BASELINES: [(f64, f64); 6] = [
    (1.0e4, 0.01),
    (120.0, 0.02),
    (256.0, 0.3),
    (256.0, 0.3),
    (10.0, 0.08),
    (10.0, 0.08),
];

/// Stationary AR(1) noise around per-bundle baselines, with the requested
/// anomaly added on the listed channels.
///
/// A jump lands at a random frame in the middle 60% of the series; a drift
/// ramps linearly from 0 to the full magnitude; an oscillation has a random
/// period of 5 to 40 frames.
pub fn gen_xpcs(spec: &XpcsSpec, id: impl Into<String>, seed: u64) -> Result<TimeSeriesBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = spec.length_range;
    let len = if lo == hi {
        lo
    } else {
        let u: f64 = rng.random();
        ((lo as f64).ln() + u * ((hi as f64).ln() - (lo as f64).ln())).exp().round() as usize
    }
    .clamp(lo, hi);
    let phi: f64 = rng.random_range(0.0..0.3);
    let innovation = (1.0 - phi * phi).sqrt();

    let mut channels: [Vec<f64>; 6] = Default::default();
    for (c, (base, rel)) in Channel::ALL.iter().zip(XPCS_BASELINES) {
        let level = match c.kind() {
            crate::data::ChannelKind::IntensityLike => base * rng.random_range(0.5..2.0),
            crate::data::ChannelKind::PositionLike => base * rng.random_range(0.8..1.2),
        };
        let sigma = match c.kind() {
            crate::data::ChannelKind::IntensityLike => level * rel,
            crate::data::ChannelKind::PositionLike => rel,
        } * rng.random_range(0.8..1.25);
        let mut e = normal(&mut rng);
        let mut series = Vec::with_capacity(len);
        for _ in 0..len {
            series.push(level + sigma * e);
            e = phi * e + innovation * normal(&mut rng);
        }
        if spec.channels.contains(c) {
            let amp = spec.magnitude * sigma;
            match spec.kind {
                AnomalyKind::None => {}
                AnomalyKind::Jump => {
                    let at = rng.random_range(len / 5..(4 * len / 5).max(len / 5 + 1));
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    series[at..].iter_mut().for_each(|v| *v += sign * amp);
                }
                AnomalyKind::Drift => {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let n = (len - 1) as f64;
                    series.iter_mut().enumerate().for_each(|(i, v)| *v += sign * amp * i as f64 / n);
                }
                AnomalyKind::Oscillation => {
                    let period: f64 = rng.random_range(5.0..40.0);
                    let offset: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    series.iter_mut().enumerate().for_each(|(i, v)| {
                        *v += amp * (std::f64::consts::TAU * i as f64 / period + offset).sin()
                    });
                }
            }
        }
        channels[c.index()] = series;
    }
    let label = if spec.kind == AnomalyKind::None { Condition::Normal } else { Condition::Anomalous };
    Ok(TimeSeriesBundle::new(id, channels)?.with_label(Some(label)))
}

pub const XPCS_BENCHMARK_NORMALS: usize = 400;
pub const XPCS_BENCHMARK_PER_KIND: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct XpcsBenchmark {
    pub bundles: Vec<TimeSeriesBundle>,
    pub kinds: Vec<AnomalyKind>,
}

impl XpcsBenchmark {
    pub fn normal_indices(&self) -> Vec<usize> {
        (0..self.kinds.len()).filter(|&i| self.kinds[i] == AnomalyKind::None).collect()
    }

    pub fn anomaly_indices(&self) -> Vec<usize> {
        (0..self.kinds.len()).filter(|&i| self.kinds[i] != AnomalyKind::None).collect()
    }
}

/// 400 normal bundles followed by 20 jumps, 20 drifts and 20 oscillations.
/// Each anomaly hits 1 to 3 random channels with magnitude 2σ to 6σ.
pub fn xpcs_benchmark(seed: u64) -> Result<XpcsBenchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bundles = Vec::new();
    let mut kinds = Vec::new();
    let mut push = |spec: XpcsSpec, rng: &mut ChaCha8Rng| -> Result<()> {
        let id = format!("xpcs-{:04}", bundles.len());
        bundles.push(gen_xpcs(&spec, id, rng.random())?);
        kinds.push(spec.kind);
        Ok(())
    };
    for _ in 0..XPCS_BENCHMARK_NORMALS {
        push(XpcsSpec::normal(), &mut rng)?;
    }
    for kind in [AnomalyKind::Jump, AnomalyKind::Drift, AnomalyKind::Oscillation] {
        for _ in 0..XPCS_BENCHMARK_PER_KIND {
            let n_channels = rng.random_range(1..=3);
            let channels: Vec<Channel> = rand::seq::index::sample(&mut rng, 6, n_channels)
                .into_iter()
                .map(|i| Channel::ALL[i])
                .collect();
            let magnitude = rng.random_range(2.0..6.0);
            push(XpcsSpec::anomalous(kind, magnitude, channels), &mut rng)?;
        }
    }
    Ok(XpcsBenchmark { bundles, kinds })
}

// ---------------------------------------------------------------- xafs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadKind {
    WhiteNoise,
    Flat,
    DriftingBackground,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XafsClass {
    Good,
    Bad(BadKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XafsSpec {
    pub n_points: usize,
    /// Edge location as a fraction of the scan.
    pub edge_position: f64,
    /// Sigmoid width as a fraction of the scan.
    pub edge_sharpness: f64,
    pub oscillation_amplitude: f64,
    /// Exponential decay rate of the post-edge wiggle per unit scan fraction.
    pub oscillation_decay: f64,
    /// Wiggle periods per unit scan fraction.
    pub oscillation_frequency: f64,
    pub noise: f64,
    pub class: XafsClass,
}

impl Default for XafsSpec {
    fn default() -> Self {
        XafsSpec {
            n_points: 400,
            edge_position: 0.4,
            edge_sharpness: 0.008,
            oscillation_amplitude: 0.08,
            oscillation_decay: 4.0,
            oscillation_frequency: 12.0,
            noise: 0.01,
            class: XafsClass::Good,
        }
    }
}

impl XafsSpec {
    fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(Error::InvalidParameter("n_points must be at least 2".into()));
        }
        if !(self.edge_position > 0.1 && self.edge_position < 0.9) {
            return Err(Error::InvalidParameter(format!(
                "edge_position {} must lie in (0.1, 0.9)",
                self.edge_position
            )));
        }
        if !(self.edge_sharpness > 0.0) || !(self.noise >= 0.0) || !(self.oscillation_decay >= 0.0) {
            return Err(Error::InvalidParameter("sharpness must be positive, noise and decay non-negative".into()));
        }
        Ok(())
    }
}

pub const XAFS_ENERGY_START: f64 = 8900.0;
pub const XAFS_ENERGY_STEP: f64 = 1.25;

/// A good spectrum is a pre-edge line, a sigmoid edge and a damped post-edge
/// sine. Bad spectra carry no edge:
/// * white noise: a level plus iid noise 10× the spec's σ,
/// * flat: a level plus the spec's noise,
/// * drifting background: an exponential rise normalised to end near 1.
///
/// The edge fraction is stored under the `edge_position` metadata key for
/// good spectra.
pub fn gen_xafs(spec: &XafsSpec, seed: u64) -> Result<Spectrum1D> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_points;
    let grid: Vec<f64> = (0..n).map(|i| XAFS_ENERGY_START + XAFS_ENERGY_STEP * i as f64).collect();
    let u: Vec<f64> = linspace(0.0, 1.0, n);
    let (y, label) = match spec.class {
        XafsClass::Good => {
            let pre = rng.random_range(0.1..0.3);
            let slope = rng.random_range(-0.05..0.05);
            let e0 = spec.edge_position;
            let y = u
                .iter()
                .map(|&x| {
                    let step = 1.0 / (1.0 + (-(x - e0) / spec.edge_sharpness).exp());
                    let dx = (x - e0).max(0.0);
                    let wiggle = spec.oscillation_amplitude
                        * (-spec.oscillation_decay * dx).exp()
                        * (std::f64::consts::TAU * spec.oscillation_frequency * dx).sin();
                    pre + slope * x + (1.0 - pre) * step + step * wiggle + spec.noise * normal(&mut rng)
                })
                .collect();
            (y, Quality::Good)
        }
        XafsClass::Bad(BadKind::WhiteNoise) => {
            let level = rng.random_range(0.2..0.8);
            (u.iter().map(|_| level + 10.0 * spec.noise * normal(&mut rng)).collect(), Quality::Bad)
        }
        XafsClass::Bad(BadKind::Flat) => {
            let level = rng.random_range(0.2..1.0);
            (u.iter().map(|_| level + spec.noise * normal(&mut rng)).collect(), Quality::Bad)
        }
        XafsClass::Bad(BadKind::DriftingBackground) => {
            let rate = rng.random_range(1.0..4.0);
            let floor = rng.random_range(0.0..0.3);
            let scale = (rate as f64).exp_m1();
            (
                u.iter()
                    .map(|&x| floor + (1.0 - floor) * (rate * x).exp_m1() / scale + spec.noise * normal(&mut rng))
                    .collect(),
                Quality::Bad,
            )
        }
    };
    let s = Spectrum1D::new(grid, y)?.with_label(Some(label));
    Ok(match spec.class {
        XafsClass::Good => s.with_meta("edge_position", spec.edge_position),
        XafsClass::Bad(_) => s,
    })
}

pub const XAFS_BENCHMARK_GOOD: usize = 500;
pub const XAFS_BENCHMARK_BAD: usize = 211;
pub const XAFS_BENCHMARK_HOLDOUT: usize = 101;
/// Edge range of the regular good spectra.
pub const XAFS_TRAIN_EDGES: (f64, f64) = (0.15, 0.6);
/// Edge range of the shifted-edge holdout, disjoint from the regular range.
pub const XAFS_HOLDOUT_EDGES: (f64, f64) = (0.7, 0.85);

#[derive(Debug, Clone, PartialEq)]
pub struct XafsBenchmark {
    pub spectra: Vec<Spectrum1D>,
    /// Indices of the shifted-edge good spectra.
    pub holdout: Vec<usize>,
    /// Edge fraction of each good spectrum, `None` for bad ones.
    pub edges: Vec<Option<f64>>,
}

/// 399 regular good spectra, then the 101 shifted-edge good spectra, then
/// 211 bad spectra cycling through the three bad kinds.
pub fn xafs_benchmark(seed: u64) -> Result<XafsBenchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectra = Vec::with_capacity(XAFS_BENCHMARK_GOOD + XAFS_BENCHMARK_BAD);
    let mut edges = Vec::with_capacity(spectra.capacity());
    let regular = XAFS_BENCHMARK_GOOD - XAFS_BENCHMARK_HOLDOUT;
    for i in 0..XAFS_BENCHMARK_GOOD {
        let (lo, hi) = if i < regular { XAFS_TRAIN_EDGES } else { XAFS_HOLDOUT_EDGES };
        let spec = XafsSpec {
            edge_position: rng.random_range(lo..hi),
            edge_sharpness: rng.random_range(0.004..0.015),
            oscillation_amplitude: rng.random_range(0.03..0.12),
            oscillation_decay: rng.random_range(2.0..6.0),
            oscillation_frequency: rng.random_range(8.0..16.0),
            noise: rng.random_range(0.01..0.08),
            ..XafsSpec::default()
        };
        edges.push(Some(spec.edge_position));
        spectra.push(gen_xafs(&spec, rng.random())?);
    }
    let kinds = [BadKind::WhiteNoise, BadKind::Flat, BadKind::DriftingBackground];
    for i in 0..XAFS_BENCHMARK_BAD {
        let spec = XafsSpec {
            noise: rng.random_range(0.01..0.08),
            class: XafsClass::Bad(kinds[i % 3]),
            ..XafsSpec::default()
        };
        edges.push(None);
        spectra.push(gen_xafs(&spec, rng.random())?);
    }
    Ok(XafsBenchmark { spectra, holdout: (regular..XAFS_BENCHMARK_GOOD).collect(), edges })
}

/// Serializes generated records as JSON Lines, the on-disk benchmark format.
pub fn to_jsonl<'a>(records: impl IntoIterator<Item = &'a Record>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

impl XpcsBenchmark {
    pub fn records(&self) -> Vec<Record> {
        self.bundles.iter().cloned().map(Record::Series).collect()
    }
}

impl XafsBenchmark {
    pub fn records(&self) -> Vec<Record> {
        self.spectra.iter().cloned().map(Record::Spectrum).collect()
    }
}

impl RampData {
    pub fn records(&self) -> Vec<Record> {
        self.spectra.iter().cloned().map(Record::Spectrum).collect()
    }
}
