//! The tell/report/ask contract wrapping each pipeline.
//!
//! An agent is told one record at a time, produces a [`Report`] describing
//! what it has seen so far and answers [`Agent::ask`] with a [`Directive`].
//! Reports are owned snapshots, so a sink on another thread never observes a
//! half-applied update. Telling is the only mutation; `ask` never changes
//! state.

use std::fmt;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::anomaly::AnomalyPipeline;
use crate::classify::ClassifierPipeline;
use crate::data::{Condition, Quality, Record};
use crate::error::{Error, Result};
use crate::features::xpcs_features;
use crate::nmf::{NmfConfig, NmfModel};

pub const REPORT_SCHEMA_VERSION: &str = "sentinel-report/1";
pub const DEFAULT_PAUSE_AFTER: usize = 3;
/// Latest-pattern relative error above which an NMF report is a warning.
pub const DEFAULT_NMF_WARN_ERROR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Nmf,
    Anomaly,
    Classification,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Nmf => "nmf",
            AgentKind::Anomaly => "anomaly",
            AgentKind::Classification => "classification",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Warning,
    Alarm,
}

/// Status glyphs as Slack-style short codes; sinks decide how to render
/// them.
///
/// | status  | code               |
/// |---------|--------------------|
/// | ok      | `white_check_mark` |
/// | warning | `warning`          |
/// | alarm   | `rotating_light`   |
///
/// Classification payloads carry their own code: `white_check_mark` for
/// good spectra, `x` for bad ones.
pub fn glyph_code(status: Status) -> &'static str {
    match status {
        Status::Ok => "white_check_mark",
        Status::Warning => "warning",
        Status::Alarm => "rotating_light",
    }
}

pub fn quality_glyph(q: Quality) -> &'static str {
    match q {
        Quality::Good => "white_check_mark",
        Quality::Bad => "x",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub timestamp: DateTime<Utc>,
    pub agent_id: String,
    pub kind: AgentKind,
    pub sequence_number: u64,
    pub status: Status,
    pub glyph: String,
    /// One-line human summary.
    pub summary: String,
    pub payload: Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }

    pub fn timestamp_rfc3339(&self) -> String {
        self.timestamp.to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Continue,
    Pause,
    Alert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub action: Action,
    pub reason: String,
}

impl Directive {
    fn proceed() -> Self {
        Directive { action: Action::Continue, reason: "nothing to act on".into() }
    }
}

/// Returned by a successful tell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    /// Total records told to this agent, including this one.
    pub events: u64,
}

pub trait Agent: Send {
    fn id(&self) -> &str;

    fn kind(&self) -> AgentKind;

    /// Ingests one record. `source` names where it came from (a file name or
    /// a run id) and shows up in reports.
    fn tell_from(&mut self, record: &Record, source: Option<&str>) -> Result<Ack>;

    fn tell(&mut self, record: &Record) -> Result<Ack> {
        self.tell_from(record, None)
    }

    /// Snapshot of the current state stamped with `timestamp`.
    fn report_at(&mut self, timestamp: DateTime<Utc>) -> Result<Report>;

    fn report(&mut self) -> Result<Report> {
        self.report_at(Utc::now())
    }

    fn ask(&self) -> Directive;
}

/// Bookkeeping shared by every agent.
#[derive(Debug, Clone, Default)]
struct Counters {
    events: u64,
    sequence: u64,
}

impl Counters {
    fn told(&mut self) -> Ack {
        self.events += 1;
        Ack { events: self.events }
    }

    #[allow(clippy::too_many_arguments)]
    fn stamp(
        &mut self,
        id: &str,
        kind: AgentKind,
        timestamp: DateTime<Utc>,
        status: Status,
        glyph: &str,
        summary: String,
        payload: Value,
    ) -> Report {
        self.sequence += 1;
        Report {
            schema_version: REPORT_SCHEMA_VERSION.to_string(),
            timestamp,
            agent_id: id.to_string(),
            kind,
            sequence_number: self.sequence,
            status,
            glyph: glyph.to_string(),
            summary,
            payload,
        }
    }
}

fn mismatch(agent: AgentKind, record: &Record) -> Error {
    Error::TypeMismatch { agent: agent.name(), actual: record.kind() }
}

// ---------------------------------------------------------------- nmf

/// Refits an NMF decomposition after every spectrum. Monitoring only: it
/// always answers Continue.
#[derive(Debug, Clone)]
pub struct NmfAgent {
    id: String,
    model: NmfModel,
    warn_error: f64,
    counters: Counters,
}

impl NmfAgent {
    pub fn new(id: impl Into<String>, config: NmfConfig) -> Result<Self> {
        Ok(NmfAgent {
            id: id.into(),
            model: NmfModel::empty(config)?,
            warn_error: DEFAULT_NMF_WARN_ERROR,
            counters: Counters::default(),
        })
    }

    pub fn with_warn_error(mut self, e: f64) -> Self {
        self.warn_error = e;
        self
    }

    pub fn model(&self) -> &NmfModel {
        &self.model
    }
}

impl Agent for NmfAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Nmf
    }

    fn tell_from(&mut self, record: &Record, _source: Option<&str>) -> Result<Ack> {
        let Record::Spectrum(s) = record else {
            return Err(mismatch(self.kind(), record));
        };
        self.model.tell(s)?;
        Ok(self.counters.told())
    }

    fn report_at(&mut self, timestamp: DateTime<Utc>) -> Result<Report> {
        if self.model.n_rows() == 0 {
            return Err(Error::NoData(self.id.clone()));
        }
        let r = self.model.report()?;
        let newest = self.model.n_rows() - 1;
        let pos = r.row_index.iter().position(|&i| i == newest).expect("every row is reported");
        let err = r.rel_errors[pos];
        let status = if err > self.warn_error { Status::Warning } else { Status::Ok };
        let summary = format!(
            "{} patterns, {} components, newest pattern error {:.4}, dominant component {}",
            self.model.n_rows(),
            self.model.n_components(),
            err,
            r.dominant[pos]
        );
        let payload = serde_json::to_value(&r).expect("reports serialize");
        Ok(self.counters.stamp(&self.id, self.kind(), timestamp, status, glyph_code(status), summary, payload))
    }

    fn ask(&self) -> Directive {
        Directive::proceed()
    }
}

// ---------------------------------------------------------------- anomaly

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Assessment {
    run_id: String,
    source: Option<String>,
    score: f64,
    threshold: f64,
    label: Condition,
    feature_flags: Vec<String>,
    truth: Option<Condition>,
}

/// Scores each run with a pre-trained anomaly pipeline.
///
/// ask: Pause once `pause_after` consecutive runs were anomalous, Alert
/// after any single anomalous run, Continue otherwise.
#[derive(Debug, Clone)]
pub struct AnomalyAgent {
    id: String,
    pipeline: Option<AnomalyPipeline>,
    pause_after: usize,
    last: Option<Assessment>,
    streak: Vec<String>,
    counters: Counters,
}

impl AnomalyAgent {
    /// An agent without a model; tells fail until one is loaded.
    pub fn uninitialized(id: impl Into<String>) -> Self {
        AnomalyAgent {
            id: id.into(),
            pipeline: None,
            pause_after: DEFAULT_PAUSE_AFTER,
            last: None,
            streak: Vec::new(),
            counters: Counters::default(),
        }
    }

    pub fn new(id: impl Into<String>, pipeline: AnomalyPipeline) -> Self {
        Self::uninitialized(id).with_pipeline(pipeline)
    }

    pub fn with_pipeline(mut self, pipeline: AnomalyPipeline) -> Self {
        self.pipeline = Some(pipeline);
        self
    }

    pub fn with_pause_after(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("pause_after must be at least 1".into()));
        }
        self.pause_after = n;
        Ok(self)
    }

    pub fn pipeline(&self) -> Option<&AnomalyPipeline> {
        self.pipeline.as_ref()
    }
}

impl Agent for AnomalyAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Anomaly
    }

    fn tell_from(&mut self, record: &Record, source: Option<&str>) -> Result<Ack> {
        let pipeline = self.pipeline.as_ref().ok_or_else(|| Error::NotInitialized(self.id.clone()))?;
        let Record::Series(bundle) = record else {
            return Err(mismatch(self.kind(), record));
        };
        let features = xpcs_features(bundle);
        let score = pipeline.score(&features.values)?;
        let threshold = pipeline.threshold();
        let label = if score > threshold { Condition::Anomalous } else { Condition::Normal };
        let run_id = if bundle.id().is_empty() { source.unwrap_or("unnamed").to_string() } else { bundle.id().to_string() };
        if label == Condition::Anomalous {
            self.streak.push(run_id.clone());
        } else {
            self.streak.clear();
        }
        self.last = Some(Assessment {
            run_id,
            source: source.map(str::to_string),
            score,
            threshold,
            label,
            feature_flags: features.flags,
            truth: bundle.label(),
        });
        Ok(self.counters.told())
    }

    fn report_at(&mut self, timestamp: DateTime<Utc>) -> Result<Report> {
        let a = self.last.as_ref().ok_or_else(|| Error::NoData(self.id.clone()))?;
        let status = match (a.label, a.feature_flags.is_empty()) {
            (Condition::Anomalous, _) => Status::Alarm,
            (Condition::Normal, false) => Status::Warning,
            (Condition::Normal, true) => Status::Ok,
        };
        let summary = format!(
            "run {}: {} (score {:.4}, threshold {:.4})",
            a.run_id,
            match a.label {
                Condition::Anomalous => "anomalous",
                Condition::Normal => "normal",
            },
            a.score,
            a.threshold
        );
        let mut payload = serde_json::to_value(a).expect("assessment serializes");
        if let Some(p) = &self.pipeline {
            payload["detector"] = json!(p.detector.kind());
        }
        let (id, kind) = (self.id.clone(), self.kind());
        Ok(self.counters.stamp(&id, kind, timestamp, status, glyph_code(status), summary, payload))
    }

    fn ask(&self) -> Directive {
        if self.streak.len() >= self.pause_after {
            Directive {
                action: Action::Pause,
                reason: format!("{} consecutive anomalous runs: {}", self.streak.len(), self.streak.join(", ")),
            }
        } else if let Some(a) = self.last.as_ref().filter(|a| a.label == Condition::Anomalous) {
            Directive {
                action: Action::Alert,
                reason: format!("run {} is anomalous (score {:.4} > {:.4})", a.run_id, a.score, a.threshold),
            }
        } else {
            Directive::proceed()
        }
    }
}

// ---------------------------------------------------------------- classification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Verdict {
    source: String,
    label: Quality,
    confidence: f64,
    emoji_code: String,
    truth: Option<Quality>,
}

/// Labels each spectrum good or bad with a pre-trained classifier and
/// raises an Alert after every bad one.
#[derive(Debug, Clone)]
pub struct ClassifierAgent {
    id: String,
    pipeline: Option<ClassifierPipeline>,
    last: Option<Verdict>,
    counters: Counters,
}

impl ClassifierAgent {
    pub fn uninitialized(id: impl Into<String>) -> Self {
        ClassifierAgent { id: id.into(), pipeline: None, last: None, counters: Counters::default() }
    }

    pub fn new(id: impl Into<String>, pipeline: ClassifierPipeline) -> Self {
        Self::uninitialized(id).with_pipeline(pipeline)
    }

    pub fn with_pipeline(mut self, pipeline: ClassifierPipeline) -> Self {
        self.pipeline = Some(pipeline);
        self
    }

    pub fn pipeline(&self) -> Option<&ClassifierPipeline> {
        self.pipeline.as_ref()
    }
}

impl Agent for ClassifierAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Classification
    }

    fn tell_from(&mut self, record: &Record, source: Option<&str>) -> Result<Ack> {
        let pipeline = self.pipeline.as_ref().ok_or_else(|| Error::NotInitialized(self.id.clone()))?;
        let Record::Spectrum(s) = record else {
            return Err(mismatch(self.kind(), record));
        };
        let (label, confidence) = pipeline.predict_with_confidence(s)?;
        let source = source.map(str::to_string).unwrap_or_else(|| format!("spectrum #{}", self.counters.events + 1));
        self.last = Some(Verdict {
            source,
            label,
            confidence,
            emoji_code: quality_glyph(label).to_string(),
            truth: s.label(),
        });
        Ok(self.counters.told())
    }

    fn report_at(&mut self, timestamp: DateTime<Utc>) -> Result<Report> {
        let v = self.last.as_ref().ok_or_else(|| Error::NoData(self.id.clone()))?;
        let status = match v.label {
            Quality::Good => Status::Ok,
            Quality::Bad => Status::Alarm,
        };
        let summary = format!(
            "{}: {} (confidence {:.2})",
            v.source,
            match v.label {
                Quality::Good => "good",
                Quality::Bad => "bad",
            },
            v.confidence
        );
        let glyph = v.emoji_code.clone();
        let mut payload = serde_json::to_value(v).expect("verdict serializes");
        if let Some(p) = &self.pipeline {
            payload["model"] = json!(p.classifier.kind());
        }
        let (id, kind) = (self.id.clone(), self.kind());
        Ok(self.counters.stamp(&id, kind, timestamp, status, &glyph, summary, payload))
    }

    fn ask(&self) -> Directive {
        match &self.last {
            Some(v) if v.label == Quality::Bad => Directive {
                action: Action::Alert,
                reason: format!("{} looks bad (confidence {:.2})", v.source, v.confidence),
            },
            _ => Directive::proceed(),
        }
    }
}
