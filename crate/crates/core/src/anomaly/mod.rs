//! Novelty detection on XPCS feature vectors.
//!
//! Every detector is fitted on normal data only; labels enter solely through
//! [`tune`] and [`evaluate`].

mod ee;
mod iforest;
mod lof;
mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use ee::{ee_fit, EeModel, DEFAULT_SUPPORT_FRACTION, N_STARTS};
pub use iforest::{
    anomaly_score, average_path_length, iforest_fit, IforestModel, IsolationTree, Node, DEFAULT_N_TREES,
    MAX_SUBSAMPLE,
};
pub use lof::{lof_fit, LofModel};
pub use threshold::contamination_threshold;

use crate::data::{Condition, TimeSeriesBundle};
use crate::error::{Error, Result};
use crate::features::{xpcs_features, FeatureNormalizer, XPCS_SCHEMA_VERSION};
use crate::matrix::DenseMatrix;
use crate::metrics::{fdr, recall, ConfusionMatrix};
use crate::pca::PcaModel;

pub const DEFAULT_N_COMPONENTS: [usize; 6] = [2, 3, 5, 8, 12, 20];
pub const DEFAULT_CONTAMINATION: [f64; 4] = [0.01, 0.02, 0.05, 0.1];
pub const DEFAULT_K_NEIGHBORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Lof,
    Ee,
    Iforest,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Lof, DetectorKind::Ee, DetectorKind::Iforest];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Lof => "lof",
            DetectorKind::Ee => "ee",
            DetectorKind::Iforest => "iforest",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lof" => Ok(DetectorKind::Lof),
            "ee" | "elliptic" | "elliptic_envelope" => Ok(DetectorKind::Ee),
            "iforest" | "isolation_forest" => Ok(DetectorKind::Iforest),
            other => Err(Error::InvalidParameter(format!("unknown detector '{other}' (expected lof, ee or iforest)"))),
        }
    }
}

/// Detector hyperparameters other than the PCA dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub contamination: f64,
    pub k_neighbors: usize,
    pub support_fraction: f64,
    pub n_trees: usize,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        DetectorConfig {
            kind,
            contamination: 0.05,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            support_fraction: DEFAULT_SUPPORT_FRACTION,
            n_trees: DEFAULT_N_TREES,
            seed: 0,
        }
    }

    pub fn with_contamination(mut self, c: f64) -> Self {
        self.contamination = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Detector {
    Lof(LofModel),
    Ee(EeModel),
    Iforest(IforestModel),
}

impl Detector {
    pub fn fit(x: &DenseMatrix, config: &DetectorConfig) -> Result<Self> {
        Ok(match config.kind {
            DetectorKind::Lof => Detector::Lof(lof_fit(x, config.k_neighbors, config.contamination)?),
            DetectorKind::Ee => {
                Detector::Ee(ee_fit(x, config.contamination, config.support_fraction, config.seed)?)
            }
            DetectorKind::Iforest => {
                Detector::Iforest(iforest_fit(x, config.n_trees, config.contamination, config.seed)?)
            }
        })
    }

    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Lof(_) => DetectorKind::Lof,
            Detector::Ee(_) => DetectorKind::Ee,
            Detector::Iforest(_) => DetectorKind::Iforest,
        }
    }

    /// Higher is more anomalous for every detector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            Detector::Lof(m) => m.score(x),
            Detector::Ee(m) => m.score(x),
            Detector::Iforest(m) => m.score(x),
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Detector::Lof(m) => m.threshold(),
            Detector::Ee(m) => m.threshold(),
            Detector::Iforest(m) => m.threshold(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Condition> {
        Ok(if self.score(x)? > self.threshold() { Condition::Anomalous } else { Condition::Normal })
    }
}

/// Normalizer, PCA projection and detector, applied in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPipeline {
    pub feature_schema: String,
    pub normalizer: FeatureNormalizer,
    pub pca: PcaModel,
    pub detector: Detector,
    pub config: DetectorConfig,
}

impl AnomalyPipeline {
    pub fn fit(train: &DenseMatrix, n_components: usize, config: &DetectorConfig) -> Result<Self> {
        let normalizer = FeatureNormalizer::fit(train)?;
        let z = normalizer.apply_matrix(train)?;
        Self::fit_normalized(normalizer, &z, n_components, config)
    }

    fn fit_normalized(
        normalizer: FeatureNormalizer,
        z: &DenseMatrix,
        n_components: usize,
        config: &DetectorConfig,
    ) -> Result<Self> {
        let pca = PcaModel::fit(z, n_components)?;
        let scores = pca.transform(z)?;
        let detector = Detector::fit(&scores, config)?;
        Ok(AnomalyPipeline {
            feature_schema: XPCS_SCHEMA_VERSION.to_string(),
            normalizer,
            pca,
            detector,
            config: config.clone(),
        })
    }

    pub fn project(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.pca.transform_row(&self.normalizer.apply(features)?)
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.detector.score(&self.project(features)?)
    }

    pub fn predict(&self, features: &[f64]) -> Result<Condition> {
        self.detector.predict(&self.project(features)?)
    }

    /// Featurizes and scores a run; returns the verdict and the raw score.
    pub fn assess(&self, bundle: &TimeSeriesBundle) -> Result<(Condition, f64)> {
        let score = self.score(&xpcs_features(bundle).values)?;
        let verdict = if score > self.detector.threshold() { Condition::Anomalous } else { Condition::Normal };
        Ok((verdict, score))
    }

    pub fn threshold(&self) -> f64 {
        self.detector.threshold()
    }

    pub fn n_components(&self) -> usize {
        self.pca.n_components()
    }
}

/// Confusion matrix on labeled feature rows, with `Anomalous` as positive.
pub fn evaluate(pipeline: &AnomalyPipeline, x: &DenseMatrix, labels: &[Condition]) -> Result<ConfusionMatrix> {
    if x.rows() != labels.len() {
        return Err(Error::dims(format!("{} labels", x.rows()), labels.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (r, &l) in x.row_iter().zip(labels) {
        cm.record(pipeline.predict(r)? == Condition::Anomalous, l == Condition::Anomalous);
    }
    Ok(cm)
}

/// `recall_anomaly × (1 − FDR)`; 0 when nothing was flagged.
pub fn tuning_objective(cm: &ConfusionMatrix) -> Result<f64> {
    let r = recall(cm)?;
    Ok(match fdr(cm) {
        Ok(f) => r * (1.0 - f),
        Err(_) => 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub n_components: Vec<usize>,
    pub contamination: Vec<f64>,
}

impl Default for TuneGrid {
    fn default() -> Self {
        TuneGrid { n_components: DEFAULT_N_COMPONENTS.to_vec(), contamination: DEFAULT_CONTAMINATION.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub n_components: usize,
    pub contamination: f64,
    pub confusion: ConfusionMatrix,
    pub recall: f64,
    /// Absent when the cell raised no alarms.
    pub fdr: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub kind: DetectorKind,
    pub best: TuneRow,
    pub table: Vec<TuneRow>,
}

impl TuneResult {
    pub fn objective(&self) -> f64 {
        self.best.objective
    }
}

/// Grid search over PCA dimension and contamination, maximizing
/// [`tuning_objective`] on the labeled validation set. Ties go to the smaller
/// dimension, then the smaller contamination.
pub fn tune(
    config: &DetectorConfig,
    train: &DenseMatrix,
    validation: &DenseMatrix,
    labels: &[Condition],
    grid: &TuneGrid,
) -> Result<TuneResult> {
    if grid.n_components.is_empty() || grid.contamination.is_empty() {
        return Err(Error::InvalidParameter("tuning grid is empty".into()));
    }
    if validation.rows() != labels.len() {
        return Err(Error::dims(format!("{} labels", validation.rows()), labels.len()));
    }
    let anomalies = labels.iter().filter(|l| **l == Condition::Anomalous).count();
    if anomalies == 0 || anomalies == labels.len() {
        return Err(Error::InvalidData("validation set must contain both normal and anomalous runs".into()));
    }

    let normalizer = FeatureNormalizer::fit(train)?;
    let z = normalizer.apply_matrix(train)?;
    let mut table = Vec::with_capacity(grid.n_components.len() * grid.contamination.len());
    for &k in &grid.n_components {
        for &c in &grid.contamination {
            let cell = config.clone().with_contamination(c);
            let p = AnomalyPipeline::fit_normalized(normalizer.clone(), &z, k, &cell)?;
            let cm = evaluate(&p, validation, labels)?;
            table.push(TuneRow {
                n_components: k,
                contamination: c,
                confusion: cm,
                recall: recall(&cm)?,
                fdr: fdr(&cm).ok(),
                objective: tuning_objective(&cm)?,
            });
        }
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            b.objective
                .total_cmp(&a.objective)
                .then(a.n_components.cmp(&b.n_components))
                .then(a.contamination.total_cmp(&b.contamination))
        })
        .cloned()
        .expect("grid is non-empty");
    Ok(TuneResult { kind: config.kind, best, table })
}

/// Feature rows for a set of runs, one row per bundle.
pub fn feature_matrix(bundles: &[TimeSeriesBundle]) -> Result<DenseMatrix> {
    let mut x = DenseMatrix::zeros(0, crate::features::XPCS_FEATURE_COUNT);
    for b in bundles {
        x.push_row(&xpcs_features(b).values)?;
    }
    Ok(x)
}

/// Outcome of the full protocol for one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub tune: TuneResult,
    /// Refitted on the training split at the best cell.
    pub pipeline: AnomalyPipeline,
    pub test: ConfusionMatrix,
    pub test_recall: f64,
    pub test_fdr: Option<f64>,
}

/// Novelty split, per-detector tuning on validation and a final score on
/// the untouched test split. Every bundle must be labeled.
pub fn run_protocol(
    bundles: &[TimeSeriesBundle],
    configs: &[DetectorConfig],
    grid: &TuneGrid,
    seed: u64,
) -> Result<Vec<ProtocolOutcome>> {
    let mut normals = Vec::new();
    let mut anomalies = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        match b.label() {
            Some(Condition::Normal) => normals.push(i),
            Some(Condition::Anomalous) => anomalies.push(i),
            None => return Err(Error::InvalidData(format!("run {i} (`{}`) has no label", b.id()))),
        }
    }
    let split = crate::split::split_anomaly(&normals, &anomalies, seed)?;
    let x = feature_matrix(bundles)?;
    let labels = |idx: &[usize]| -> Vec<Condition> { idx.iter().map(|&i| bundles[i].label().unwrap()).collect() };
    let train = x.select_rows(&split.train);
    let val = x.select_rows(&split.validation);
    let test = x.select_rows(&split.test);
    let (val_labels, test_labels) = (labels(&split.validation), labels(&split.test));

    configs
        .iter()
        .map(|config| {
            let tune = tune(config, &train, &val, &val_labels, grid)?;
            let cell = config.clone().with_contamination(tune.best.contamination);
            let pipeline = AnomalyPipeline::fit(&train, tune.best.n_components, &cell)?;
            let cm = evaluate(&pipeline, &test, &test_labels)?;
            Ok(ProtocolOutcome { tune, pipeline, test_recall: recall(&cm)?, test_fdr: fdr(&cm).ok(), test: cm })
        })
        .collect()
}
