//! Three in-browser demos over `sentinel-core`: an NMF temperature ramp, an
//! XPCS run scored by an anomaly pipeline, and the binary metrics.
//!
//! Each export returns a JSON string so the page needs no generated types.
//! The plain functions underneath are what the tests call.

use std::cell::RefCell;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sentinel_core::anomaly::{feature_matrix, AnomalyPipeline, DetectorConfig, DetectorKind};
use sentinel_core::metrics::{accuracy, f1, fdr, precision, recall};
use sentinel_core::nmf::{NmfConfig, NmfModel};
use sentinel_core::synth::{gen_ramp, gen_xpcs, AnomalyKind, RampSpec, XpcsSpec};
use sentinel_core::{Channel, ConfusionMatrix, Result};

/// Normal runs the demo detector is trained on.
const TRAINING_RUNS: usize = 120;
const RUN_LENGTH: usize = 400;

#[derive(Debug, Serialize)]
pub struct RampDemo {
    pub temperatures: Vec<f64>,
    /// temperatures × components, sorted by temperature
    pub weights: Vec<Vec<f64>>,
    pub dominant: Vec<usize>,
    pub rel_errors: Vec<f64>,
    pub grid: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub true_t_c: f64,
    /// First temperature whose dominant component differs from the first pattern's.
    pub detected_switch: Option<f64>,
}

pub fn ramp_demo(components: usize, noise: f64, seed: u64) -> Result<RampDemo> {
    let spec = RampSpec { noise, ..RampSpec::default() };
    let data = gen_ramp(&spec, seed)?;
    let report = NmfModel::fit_spectra(&data.spectra, &NmfConfig::new(components).with_seed(seed))?.report()?;
    let temperatures: Vec<f64> = report.meta_values.iter().map(|t| t.unwrap_or(f64::NAN)).collect();
    let detected_switch = report.dominant.iter().position(|d| *d != report.dominant[0]).map(|i| temperatures[i]);
    Ok(RampDemo {
        temperatures,
        weights: report.weights,
        dominant: report.dominant,
        rel_errors: report.rel_errors,
        grid: report.grid,
        components: report.components,
        true_t_c: spec.t_c,
        detected_switch,
    })
}

#[derive(Debug, Serialize)]
pub struct RunDemo {
    pub label: String,
    pub score: f64,
    pub threshold: f64,
    /// The channel the anomaly was planted in.
    pub channel: String,
    pub trace: Vec<f64>,
}

thread_local! {
    static PIPELINE: RefCell<Option<AnomalyPipeline>> = const { RefCell::new(None) };
}

fn trained_pipeline() -> Result<AnomalyPipeline> {
    if let Some(p) = PIPELINE.with(|c| c.borrow().clone()) {
        return Ok(p);
    }
    let runs = (0..TRAINING_RUNS)
        .map(|i| gen_xpcs(&XpcsSpec::normal().with_length(RUN_LENGTH), format!("train-{i}"), 1000 + i as u64))
        .collect::<Result<Vec<_>>>()?;
    let x = feature_matrix(&runs)?;
    let p = AnomalyPipeline::fit(&x, 8, &DetectorConfig::new(DetectorKind::Ee).with_contamination(0.02))?;
    PIPELINE.with(|c| *c.borrow_mut() = Some(p.clone()));
    Ok(p)
}

/// `kind` is none, jump, drift or oscillation; `magnitude` is in noise σ.
pub fn score_run(kind: &str, magnitude: f64, seed: u64) -> Result<RunDemo> {
    let kind = match kind {
        "jump" => AnomalyKind::Jump,
        "drift" => AnomalyKind::Drift,
        "oscillation" => AnomalyKind::Oscillation,
        _ => AnomalyKind::None,
    };
    let channel = Channel::TotalIntensity;
    let spec = match kind {
        AnomalyKind::None => XpcsSpec::normal(),
        k => XpcsSpec::anomalous(k, magnitude, vec![channel]),
    }
    .with_length(RUN_LENGTH);
    let run = gen_xpcs(&spec, "demo", seed)?;
    let pipeline = trained_pipeline()?;
    let (label, score) = pipeline.assess(&run)?;
    Ok(RunDemo {
        label: label.to_string(),
        score,
        threshold: pipeline.threshold(),
        channel: channel.name().to_string(),
        trace: run.channel(channel).to_vec(),
    })
}

#[derive(Debug, Serialize)]
pub struct MetricsDemo {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fdr: Option<f64>,
    pub f1: Option<f64>,
}

/// Undefined ratios come back as `null`.
pub fn metrics_demo(tp: u64, fp: u64, tn: u64, fn_: u64) -> MetricsDemo {
    let cm = ConfusionMatrix::new(tp, fp, tn, fn_);
    MetricsDemo {
        accuracy: accuracy(&cm).ok(),
        precision: precision(&cm).ok(),
        recall: recall(&cm).ok(),
        fdr: fdr(&cm).ok(),
        f1: f1(&cm).ok(),
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen(js_name = rampDemo)]
pub fn ramp_demo_js(components: usize, noise: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(ramp_demo(components, noise, seed.into()))
}

#[wasm_bindgen(js_name = scoreRun)]
pub fn score_run_js(kind: &str, magnitude: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(score_run(kind, magnitude, seed.into()))
}

#[wasm_bindgen(js_name = metrics)]
pub fn metrics_js(tp: u32, fp: u32, tn: u32, fn_: u32) -> String {
    serde_json::to_string(&metrics_demo(tp.into(), fp.into(), tn.into(), fn_.into())).expect("plain numbers")
}
