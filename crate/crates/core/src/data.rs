//! Measurement records and their JSON Lines interchange format.
//!
//! Two record kinds flow through the pipelines: [`Spectrum1D`] (a 1-d
//! intensity profile, the unit for NMF and classification) and
//! [`TimeSeriesBundle`] (six per-frame channels, the unit for anomaly
//! detection). Both validate their invariants on construction and on
//! deserialization.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Good/bad verdict for a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    #[serde(alias = "Good")]
    Good,
    #[serde(alias = "Bad")]
    Bad,
}

/// Normal/anomalous verdict for a time-series measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    #[serde(alias = "Normal")]
    Normal,
    #[serde(alias = "Anomalous")]
    Anomalous,
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quality::Good => "good",
            Quality::Bad => "bad",
        })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Normal => "normal",
            Condition::Anomalous => "anomalous",
        })
    }
}

/// Maps a two-valued label onto positive/negative for metric computation.
pub trait BinaryLabel: Copy + PartialEq {
    const POSITIVE: Self;
    const NEGATIVE: Self;

    fn is_positive(self) -> bool {
        self == Self::POSITIVE
    }

    fn from_positive(positive: bool) -> Self {
        if positive {
            Self::POSITIVE
        } else {
            Self::NEGATIVE
        }
    }
}

/// Anomalous is the alarm class.
impl BinaryLabel for Condition {
    const POSITIVE: Self = Condition::Anomalous;
    const NEGATIVE: Self = Condition::Normal;
}

/// Good is the retrieved class for classification F1.
impl BinaryLabel for Quality {
    const POSITIVE: Self = Quality::Good;
    const NEGATIVE: Self = Quality::Bad;
}

/// A 1-d intensity profile on a strictly increasing ordinate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectrum")]
pub struct Spectrum1D {
    grid: Vec<f64>,
    intensity: Vec<f64>,
    #[serde(default)]
    meta: BTreeMap<String, f64>,
    #[serde(default)]
    label: Option<Quality>,
}

#[derive(Deserialize)]
struct RawSpectrum {
    grid: Vec<f64>,
    intensity: Vec<f64>,
    #[serde(default)]
    meta: BTreeMap<String, f64>,
    #[serde(default)]
    label: Option<Quality>,
}

impl TryFrom<RawSpectrum> for Spectrum1D {
    type Error = Error;

    fn try_from(raw: RawSpectrum) -> Result<Self> {
        let mut s = Spectrum1D::new(raw.grid, raw.intensity)?;
        s.meta = raw.meta;
        s.label = raw.label;
        Ok(s)
    }
}

impl Spectrum1D {
    pub fn new(grid: Vec<f64>, intensity: Vec<f64>) -> Result<Self> {
        if grid.len() != intensity.len() {
            return Err(Error::dims(
                format!("intensity of length {}", grid.len()),
                intensity.len(),
            ));
        }
        if grid.len() < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                actual: grid.len(),
            });
        }
        if grid.iter().chain(&intensity).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("spectrum contains non-finite values".into()));
        }
        if let Some(i) = grid.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(format!(
                "grid is not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Spectrum1D {
            grid,
            intensity,
            meta: BTreeMap::new(),
            label: None,
        })
    }

    /// Spectrum on the integer grid `0, 1, …, n−1`.
    pub fn from_intensity(intensity: Vec<f64>) -> Result<Self> {
        let grid = (0..intensity.len()).map(|i| i as f64).collect();
        Self::new(grid, intensity)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: f64) -> Self {
        self.meta.insert(key.into(), value);
        self
    }

    pub fn with_label(mut self, label: Option<Quality>) -> Self {
        self.label = label;
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn meta(&self) -> &BTreeMap<String, f64> {
        &self.meta
    }

    pub fn meta_value(&self, key: &str) -> Option<f64> {
        self.meta.get(key).copied()
    }

    pub fn label(&self) -> Option<Quality> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// The six per-frame channels of an XPCS-style measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    TotalIntensity,
    IntensityStd,
    ComX,
    ComY,
    ComXStd,
    ComYStd,
}

/// How a channel is preprocessed before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Centered and divided by the mean.
    IntensityLike,
    /// Centered only; absolute displacement carries signal.
    PositionLike,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::TotalIntensity,
        Channel::IntensityStd,
        Channel::ComX,
        Channel::ComY,
        Channel::ComXStd,
        Channel::ComYStd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::TotalIntensity => "total_intensity",
            Channel::IntensityStd => "intensity_std",
            Channel::ComX => "com_x",
            Channel::ComY => "com_y",
            Channel::ComXStd => "com_x_std",
            Channel::ComYStd => "com_y_std",
        }
    }

    pub fn kind(self) -> ChannelKind {
        match self {
            Channel::TotalIntensity | Channel::IntensityStd => ChannelKind::IntensityLike,
            // the center-of-mass spreads describe the peak position too
            Channel::ComX | Channel::ComY | Channel::ComXStd | Channel::ComYStd => {
                ChannelKind::PositionLike
            }
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub const MIN_SERIES_LENGTH: usize = 10;

/// Six equal-length channels describing one measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBundle", into = "RawBundle")]
pub struct TimeSeriesBundle {
    id: String,
    channels: [Vec<f64>; 6],
    label: Option<Condition>,
}

#[derive(Serialize, Deserialize)]
struct RawBundle {
    #[serde(default)]
    id: String,
    channels: BTreeMap<Channel, Vec<f64>>,
    #[serde(default)]
    label: Option<Condition>,
}

impl TryFrom<RawBundle> for TimeSeriesBundle {
    type Error = Error;

    fn try_from(mut raw: RawBundle) -> Result<Self> {
        let mut take = |c: Channel| {
            raw.channels
                .remove(&c)
                .ok_or_else(|| Error::InvalidData(format!("missing channel `{}`", c.name())))
        };
        let channels = [
            take(Channel::TotalIntensity)?,
            take(Channel::IntensityStd)?,
            take(Channel::ComX)?,
            take(Channel::ComY)?,
            take(Channel::ComXStd)?,
            take(Channel::ComYStd)?,
        ];
        Ok(TimeSeriesBundle::new(raw.id, channels)?.with_label(raw.label))
    }
}

impl From<TimeSeriesBundle> for RawBundle {
    fn from(b: TimeSeriesBundle) -> Self {
        RawBundle {
            id: b.id,
            channels: Channel::ALL.into_iter().zip(b.channels).collect(),
            label: b.label,
        }
    }
}

impl TimeSeriesBundle {
    /// Channels in [`Channel::ALL`] order.
    pub fn new(id: impl Into<String>, channels: [Vec<f64>; 6]) -> Result<Self> {
        let len = channels[0].len();
        for (c, series) in Channel::ALL.iter().zip(&channels) {
            if series.len() != len {
                return Err(Error::dims(
                    format!("channel `{}` of length {len}", c.name()),
                    series.len(),
                ));
            }
            if series.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "channel `{}` contains non-finite values",
                    c.name()
                )));
            }
        }
        if len < MIN_SERIES_LENGTH {
            return Err(Error::InsufficientData {
                required: MIN_SERIES_LENGTH,
                actual: len,
            });
        }
        Ok(TimeSeriesBundle {
            id: id.into(),
            channels,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Option<Condition>) -> Self {
        self.label = label;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        &self.channels[c.index()]
    }

    pub fn channels(&self) -> &[Vec<f64>; 6] {
        &self.channels
    }

    pub fn label(&self) -> Option<Condition> {
        self.label
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of the JSON Lines dataset interchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Spectrum(Spectrum1D),
    Series(TimeSeriesBundle),
}

impl Record {
    pub fn kind(&self) -> &'static str {
        match self {
            Record::Spectrum(_) => "spectrum",
            Record::Series(_) => "series",
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

/// Parses JSON Lines records; blank lines are skipped. Errors name the line.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidData(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidData(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<'a, W: Write>(
    mut writer: W,
    records: impl IntoIterator<Item = &'a Record>,
) -> std::io::Result<()> {
    for r in records {
        writeln!(writer, "{}", r.to_json_line())?;
    }
    Ok(())
}
