//! Streaming machine-learning pipelines for beamline monitoring.
//!
//! Three pipelines share one data model and one agent contract:
//!
//! * [`nmf`] decomposes a growing stack of spectra into non-negative
//!   end-members and reports per-pattern reconstruction diagnostics.
//! * [`anomaly`] flags time-series measurements whose engineered
//!   [`features`] fall outside the distribution of normal runs, using
//!   local density, an elliptical envelope or an isolation forest after
//!   [`pca`] reduction.
//! * [`classify`] labels spectra good or bad with k-nearest neighbours, a
//!   random forest or a small perceptron.
//!
//! Every pipeline is wrapped by an [`agent`] exposing `tell`, `report` and
//! `ask`. [`synth`] generates seeded stand-in datasets with ground truth.

pub mod agent;
pub mod anomaly;
pub mod classify;
pub mod data;
pub mod error;
pub mod features;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod nmf;
pub mod pca;
pub mod split;
pub mod synth;

pub use data::{Channel, ChannelKind, Condition, Quality, Record, Spectrum1D, TimeSeriesBundle};
pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use metrics::ConfusionMatrix;
pub use split::SplitAssignment;
