//! Good/bad spectrum classification and the evaluation protocol that
//! compares models, representations and splits.

mod knn;
mod mlp;
mod rf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use knn::{knn_fit, KnnModel, DEFAULT_K};
pub use mlp::{gradient_check, mlp_fit, MlpConfig, MlpGradient, MlpModel};
pub use rf::{rf_fit, DecisionTree, RandomForestModel, TreeNode, DEFAULT_N_TREES};

use crate::data::{Quality, Spectrum1D};
use crate::error::{Error, Result};
use crate::features::{downsample_spectrum, xafs_features, FeatureNormalizer, XAFS_LENGTH, XAFS_SCHEMA_VERSION};
use crate::matrix::DenseMatrix;
use crate::metrics::{accuracy, f1, ConfusionMatrix};
use crate::split::{split_uniform, split_unique};

pub(crate) fn check_training(x: &DenseMatrix, y: &[Quality]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::dims(format!("{} labels", x.rows()), y.len()));
    }
    if y.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    Ok(())
}

pub(crate) fn check_both_classes(y: &[Quality]) -> Result<()> {
    let good = y.iter().filter(|l| **l == Quality::Good).count();
    if good == 0 || good == y.len() {
        return Err(Error::InvalidData("training labels contain a single class".into()));
    }
    Ok(())
}

macro_rules! name_enum {
    ($t:ident { $($v:ident => $s:literal),+ $(,)? }) => {
        impl $t {
            pub fn name(self) -> &'static str {
                match self { $($t::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($s => Ok($t::$v),)+
                    other => Err(Error::InvalidParameter(format!(
                        concat!("unknown ", stringify!($t), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Rf,
    Mlp,
    Knn,
}

name_enum!(ClassifierKind { Rf => "rf", Mlp => "mlp", Knn => "knn" });

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Rf, ClassifierKind::Mlp, ClassifierKind::Knn];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Raw,
    Engineered,
}

name_enum!(Representation { Raw => "raw", Engineered => "engineered" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Uniform,
    Unique,
}

name_enum!(SplitKind { Uniform => "uniform", Unique => "unique" });

/// Model hyperparameters for every classifier kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub knn_k: usize,
    pub rf_trees: usize,
    pub mlp: MlpConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { knn_k: DEFAULT_K, rf_trees: DEFAULT_N_TREES, mlp: MlpConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Rf(RandomForestModel),
    Mlp(MlpModel),
    Knn(KnnModel),
}

impl Classifier {
    pub fn fit(kind: ClassifierKind, x: &DenseMatrix, y: &[Quality], config: &ClassifierConfig) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::Rf => Classifier::Rf(rf_fit(x, y, config.rf_trees, config.seed)?),
            ClassifierKind::Mlp => Classifier::Mlp(mlp_fit(x, y, &config.mlp.clone().with_seed(config.seed))?),
            ClassifierKind::Knn => Classifier::Knn(knn_fit(x, y, config.knn_k)?),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Rf(_) => ClassifierKind::Rf,
            Classifier::Mlp(_) => ClassifierKind::Mlp,
            Classifier::Knn(_) => ClassifierKind::Knn,
        }
    }

    /// Predicted label and the model's confidence in it: the vote fraction
    /// for the ensemble/neighbour models, the probability for the MLP.
    pub fn predict_with_confidence(&self, x: &[f64]) -> Result<(Quality, f64)> {
        match self {
            Classifier::Rf(m) => m.predict_with_fraction(x),
            Classifier::Knn(m) => m.predict_with_fraction(x),
            Classifier::Mlp(m) => {
                let p = m.predict_proba(x)?;
                Ok(if p > 0.5 { (Quality::Good, p) } else { (Quality::Bad, 1.0 - p) })
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Quality> {
        Ok(self.predict_with_confidence(x)?.0)
    }
}

/// Resamples to the fixed length and divides by the spectrum's own maximum.
/// A spectrum whose maximum is not positive is scaled by its largest
/// magnitude instead (or left alone if identically zero).
pub fn raw_representation(s: &Spectrum1D) -> Result<Vec<f64>> {
    let r = if s.len() == XAFS_LENGTH { s.clone() } else { downsample_spectrum(s, XAFS_LENGTH)? };
    let y = r.intensity();
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > 0.0 { max } else { y.iter().fold(0.0_f64, |a, v| a.max(v.abs())) };
    let scale = if scale > 0.0 { scale } else { 1.0 };
    Ok(y.iter().map(|v| v / scale).collect())
}

/// Resamples to the fixed length and computes the 20 spectrum statistics.
pub fn engineered_representation(s: &Spectrum1D) -> Result<Vec<f64>> {
    let r = if s.len() == XAFS_LENGTH { s.clone() } else { downsample_spectrum(s, XAFS_LENGTH)? };
    Ok(xafs_features(&r)?.values)
}

pub fn represent(s: &Spectrum1D, rep: Representation) -> Result<Vec<f64>> {
    match rep {
        Representation::Raw => raw_representation(s),
        Representation::Engineered => engineered_representation(s),
    }
}

/// Representation, optional normalizer and model, applied to whole spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPipeline {
    pub feature_schema: String,
    pub representation: Representation,
    pub normalizer: Option<FeatureNormalizer>,
    pub classifier: Classifier,
}

impl ClassifierPipeline {
    /// Fits on the given spectra. The engineered-feature normalizer sees only
    /// these spectra.
    pub fn fit(
        spectra: &[&Spectrum1D],
        kind: ClassifierKind,
        representation: Representation,
        config: &ClassifierConfig,
    ) -> Result<Self> {
        let labels = labels_of(spectra)?;
        let mut x = DenseMatrix::zeros(0, 0);
        for (i, s) in spectra.iter().enumerate() {
            let v = represent(s, representation)?;
            if i == 0 {
                x = DenseMatrix::zeros(0, v.len());
            }
            x.push_row(&v)?;
        }
        let normalizer = match representation {
            Representation::Engineered => Some(FeatureNormalizer::fit(&x)?),
            Representation::Raw => None,
        };
        if let Some(n) = &normalizer {
            x = n.apply_matrix(&x)?;
        }
        let classifier = Classifier::fit(kind, &x, &labels, config)?;
        let feature_schema = match representation {
            Representation::Engineered => XAFS_SCHEMA_VERSION.to_string(),
            Representation::Raw => format!("raw-max-normalized/{XAFS_LENGTH}"),
        };
        Ok(ClassifierPipeline { feature_schema, representation, normalizer, classifier })
    }

    pub fn features(&self, s: &Spectrum1D) -> Result<Vec<f64>> {
        let v = represent(s, self.representation)?;
        match &self.normalizer {
            Some(n) => n.apply(&v),
            None => Ok(v),
        }
    }

    pub fn predict_with_confidence(&self, s: &Spectrum1D) -> Result<(Quality, f64)> {
        self.classifier.predict_with_confidence(&self.features(s)?)
    }

    pub fn predict(&self, s: &Spectrum1D) -> Result<Quality> {
        Ok(self.predict_with_confidence(s)?.0)
    }

    /// Prediction on an already-represented (and normalized) vector.
    pub fn predict_vector(&self, v: &[f64]) -> Result<Quality> {
        self.classifier.predict(v)
    }
}

fn labels_of(spectra: &[&Spectrum1D]) -> Result<Vec<Quality>> {
    spectra
        .iter()
        .enumerate()
        .map(|(i, s)| s.label().ok_or_else(|| Error::InvalidData(format!("spectrum {i} has no label"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: ClassifierKind,
    pub representation: Representation,
    pub split: SplitKind,
    pub f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(pipeline: &ClassifierPipeline, spectra: &[&Spectrum1D]) -> Result<ConfusionMatrix> {
    let labels = labels_of(spectra)?;
    let mut cm = ConfusionMatrix::default();
    for (s, l) in spectra.iter().zip(labels) {
        cm.record(pipeline.predict(s)? == Quality::Good, l == Quality::Good);
    }
    Ok(cm)
}

/// 3 models × 2 representations × 2 splits. The unique split sends every
/// `holdout` index to validation plus 10% of the rest; the uniform split is
/// a random 80/20 split.
pub fn eval_suite(spectra: &[Spectrum1D], holdout: &[usize], config: &ClassifierConfig) -> Result<Vec<EvalRow>> {
    let refs: Vec<&Spectrum1D> = spectra.iter().collect();
    let labels = labels_of(&refs)?;
    check_both_classes(&labels)?;
    let splits = [
        (SplitKind::Uniform, split_uniform(spectra.len(), 0.8, config.seed)?),
        (SplitKind::Unique, split_unique(spectra.len(), holdout, 0.1, config.seed)?),
    ];
    let mut rows = Vec::with_capacity(12);
    for kind in ClassifierKind::ALL {
        for rep in [Representation::Raw, Representation::Engineered] {
            for (split_kind, split) in &splits {
                let train: Vec<&Spectrum1D> = split.train.iter().map(|&i| &spectra[i]).collect();
                let val: Vec<&Spectrum1D> = split.validation.iter().map(|&i| &spectra[i]).collect();
                let p = ClassifierPipeline::fit(&train, kind, rep, config)?;
                let cm = evaluate(&p, &val)?;
                rows.push(EvalRow {
                    model: kind,
                    representation: rep,
                    split: *split_kind,
                    f1: f1(&cm)?,
                    accuracy: accuracy(&cm)?,
                    confusion: cm,
                });
            }
        }
    }
    Ok(rows)
}

/// One line per row: model, representation, split, F1, accuracy, counts.
pub fn eval_rows_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("model,representation,split,f1,accuracy,tp,fp,tn,fn\n");
    for r in rows {
        let c = &r.confusion;
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{},{},{}\n",
            r.model, r.representation, r.split, r.f1, r.accuracy, c.tp, c.fp, c.tn, c.fn_
        ));
    }
    out
}

/// F1 grid with one line per model and the four representation/split
/// columns, laid out like the published comparison table.
pub fn eval_table_csv(rows: &[EvalRow]) -> String {
    let cols = [
        (Representation::Raw, SplitKind::Uniform),
        (Representation::Raw, SplitKind::Unique),
        (Representation::Engineered, SplitKind::Uniform),
        (Representation::Engineered, SplitKind::Unique),
    ];
    let mut out = String::from("model,raw_uniform_f1,raw_unique_f1,engineered_uniform_f1,engineered_unique_f1\n");
    for kind in ClassifierKind::ALL {
        if !rows.iter().any(|r| r.model == kind) {
            continue;
        }
        out.push_str(kind.name());
        for (rep, split) in cols {
            match rows.iter().find(|r| r.model == kind && r.representation == rep && r.split == split) {
                Some(r) => out.push_str(&format!(",{:.3}", r.f1)),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
