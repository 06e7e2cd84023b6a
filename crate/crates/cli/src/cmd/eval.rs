use std::path::PathBuf;

use clap::Args;

use sentinel_core::anomaly::feature_matrix;
use sentinel_core::metrics::{accuracy, f1, fdr, precision, recall};
use sentinel_core::{Condition, ConfusionMatrix};
use sentinel_ingest::{load_model, Pipeline};

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::io::{self, fmt_opt};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset (default: <data-dir>/xpcs.jsonl or xafs.jsonl by model kind)
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,

    /// Exit with code 3 when recall falls below this
    #[arg(long, value_name = "X")]
    pub min_recall: Option<f64>,

    /// Exit with code 3 when the false discovery rate exceeds this
    #[arg(long, value_name = "X")]
    pub max_fdr: Option<f64>,

    /// Exit with code 3 when F1 falls below this
    #[arg(long, value_name = "X")]
    pub min_f1: Option<f64>,
}

pub fn run(config: &CliConfig, args: &EvalArgs) -> Result<()> {
    let path = &config.artifact.value;
    if !path.exists() {
        return Err(CliError::Data(format!("model artifact {} does not exist", path.display())));
    }
    let artifact = load_model(path)?;
    let pipeline = Pipeline::from_artifact(&artifact)?;
    let default_data = match &pipeline {
        Pipeline::Anomaly(_) => "xpcs.jsonl",
        Pipeline::Classify(_) => "xafs.jsonl",
        Pipeline::Nmf(_) => {
            return Err(CliError::Usage("NMF models have no labels to score; use `sentinel nmf` instead".into()))
        }
    };
    let data = args.data.clone().unwrap_or_else(|| config.data_dir.value.join(default_data));
    let records = io::load_records(&data)?;

    let (cm, positive) = match &pipeline {
        Pipeline::Anomaly(p) => {
            let bundles = io::series(records, &data)?;
            let mut labels = Vec::with_capacity(bundles.len());
            for (i, b) in bundles.iter().enumerate() {
                labels.push(b.label().ok_or_else(|| {
                    CliError::Data(format!("{}: run {} (`{}`) has no label", data.display(), i + 1, b.id()))
                })?);
            }
            let x = feature_matrix(&bundles)?;
            (sentinel_core::anomaly::evaluate(p, &x, &labels)?, Condition::Anomalous.to_string())
        }
        Pipeline::Classify(p) => {
            let spectra = io::spectra(records, &data)?;
            let refs: Vec<_> = spectra.iter().collect();
            (sentinel_core::classify::evaluate(p, &refs)?, "good".to_string())
        }
        Pipeline::Nmf(_) => unreachable!("rejected above"),
    };
    print_metrics(&cm, &positive);

    let mut missed = Vec::new();
    let r = recall(&cm).ok();
    let d = fdr(&cm).ok();
    let f = f1(&cm).ok();
    if let Some(min) = args.min_recall {
        if !r.is_some_and(|v| v >= min) {
            missed.push(format!("recall {} < {min}", fmt_opt(r)));
        }
    }
    if let Some(max) = args.max_fdr {
        if !d.is_some_and(|v| v <= max) {
            missed.push(format!("FDR {} > {max}", fmt_opt(d)));
        }
    }
    if let Some(min) = args.min_f1 {
        if !f.is_some_and(|v| v >= min) {
            missed.push(format!("F1 {} < {min}", fmt_opt(f)));
        }
    }
    if missed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(missed.join("; ")))
    }
}

fn print_metrics(cm: &ConfusionMatrix, positive: &str) {
    println!("positive class: {positive}");
    println!("tp {} fp {} tn {} fn {}", cm.tp, cm.fp, cm.tn, cm.fn_);
    println!("accuracy  {}", fmt_opt(accuracy(cm).ok()));
    println!("precision {}", fmt_opt(precision(cm).ok()));
    println!("recall    {}", fmt_opt(recall(cm).ok()));
    println!("fdr       {}", fmt_opt(fdr(cm).ok()));
    println!("f1        {}", fmt_opt(f1(cm).ok()));
}
