//! Framed document streams: `start`, then events, then `stop`, per run.
//!
//! Each line of the feed is one JSON [`Document`]. Runs may interleave.
//! Within a run, `seq` must strictly increase; a gap is only a warning since
//! real acquisitions drop frames.

use std::collections::{BTreeMap, VecDeque};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use sentinel_core::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocType {
    Start,
    Event,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_type: DocType,
    pub run_id: String,
    pub seq: u64,
    /// Seconds since the Unix epoch.
    pub time: f64,
    /// start: plan metadata; event: one interchange record; stop:
    /// `{"exit_status": ...}`.
    #[serde(default)]
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("line {line}: malformed document: {message}")]
    Malformed { line: usize, message: String },

    #[error("run `{run_id}`: event seq {seq} arrived before the run's start")]
    EventBeforeStart { run_id: String, seq: u64 },

    #[error("run `{run_id}`: stop seq {seq} arrived before the run's start")]
    StopBeforeStart { run_id: String, seq: u64 },

    #[error("run `{run_id}`: second start at seq {seq}")]
    DuplicateStart { run_id: String, seq: u64 },

    #[error("run `{run_id}`: document seq {seq} arrived after the run's stop")]
    DocumentAfterStop { run_id: String, seq: u64 },

    #[error("run `{run_id}`: duplicate seq {seq}")]
    DuplicateSeq { run_id: String, seq: u64 },

    #[error("run `{run_id}`: seq {seq} arrived after seq {previous}")]
    SeqOutOfOrder { run_id: String, seq: u64, previous: u64 },

    #[error("run `{run_id}`: event seq {seq} does not hold a valid record: {message}")]
    BadEventBody { run_id: String, seq: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum StreamWarning {
    /// Frames between `after` and `got` are missing.
    SeqGap { run_id: String, after: u64, got: u64 },
    /// The feed ended before the run's stop document.
    IncompleteRun { run_id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Started { run_id: String, metadata: Value },
    Record { run_id: String, seq: u64, record: Record },
    Completed { run_id: String, exit_status: Option<String>, events: usize },
    Warning(StreamWarning),
}

#[derive(Debug)]
struct RunState {
    last_seq: u64,
    events: usize,
    stopped: bool,
}

/// Iterator over a document feed. Yields an error at most once and then
/// ends.
pub struct DocumentStream<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    runs: BTreeMap<String, RunState>,
    /// Start order, for end-of-feed warnings.
    order: Vec<String>,
    pending: VecDeque<StreamItem>,
    done: bool,
}

pub fn read_document_stream<R: BufRead>(reader: R) -> DocumentStream<R> {
    DocumentStream {
        lines: reader.lines(),
        line_no: 0,
        runs: BTreeMap::new(),
        order: Vec::new(),
        pending: VecDeque::new(),
        done: false,
    }
}

impl<R: BufRead> DocumentStream<R> {
    fn accept(&mut self, doc: Document) -> Result<(), ProtocolError> {
        let Document { doc_type, run_id, seq, body, .. } = doc;
        let Some(state) = self.runs.get_mut(&run_id) else {
            return match doc_type {
                DocType::Start => {
                    self.runs.insert(run_id.clone(), RunState { last_seq: seq, events: 0, stopped: false });
                    self.order.push(run_id.clone());
                    self.pending.push_back(StreamItem::Started { run_id, metadata: body });
                    Ok(())
                }
                DocType::Event => Err(ProtocolError::EventBeforeStart { run_id, seq }),
                DocType::Stop => Err(ProtocolError::StopBeforeStart { run_id, seq }),
            };
        };
        if state.stopped {
            return Err(ProtocolError::DocumentAfterStop { run_id, seq });
        }
        if doc_type == DocType::Start {
            return Err(ProtocolError::DuplicateStart { run_id, seq });
        }
        if seq == state.last_seq {
            return Err(ProtocolError::DuplicateSeq { run_id, seq });
        }
        if seq < state.last_seq {
            return Err(ProtocolError::SeqOutOfOrder { run_id, seq, previous: state.last_seq });
        }
        // gaps only matter between measurements
        if doc_type == DocType::Event && state.events > 0 && seq > state.last_seq + 1 {
            self.pending.push_back(StreamItem::Warning(StreamWarning::SeqGap {
                run_id: run_id.clone(),
                after: state.last_seq,
                got: seq,
            }));
        }
        state.last_seq = seq;
        match doc_type {
            DocType::Event => {
                let record: Record = serde_json::from_value(body).map_err(|e| ProtocolError::BadEventBody {
                    run_id: run_id.clone(),
                    seq,
                    message: e.to_string(),
                })?;
                state.events += 1;
                self.pending.push_back(StreamItem::Record { run_id, seq, record });
            }
            DocType::Stop => {
                state.stopped = true;
                let exit_status = body.get("exit_status").and_then(Value::as_str).map(str::to_string);
                self.pending.push_back(StreamItem::Completed { run_id, exit_status, events: state.events });
            }
            DocType::Start => unreachable!("handled above"),
        }
        Ok(())
    }

    fn finish(&mut self) {
        for run_id in &self.order {
            if !self.runs[run_id].stopped {
                self.pending.push_back(StreamItem::Warning(StreamWarning::IncompleteRun { run_id: run_id.clone() }));
            }
        }
    }
}

impl<R: BufRead> Iterator for DocumentStream<R> {
    type Item = Result<StreamItem, ProtocolError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(item) = self.pending.pop_front() {
                return Some(Ok(item));
            }
            if self.done {
                return None;
            }
            let Some(line) = self.lines.next() else {
                self.done = true;
                self.finish();
                continue;
            };
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    self.done = true;
                    return Some(Err(ProtocolError::Malformed { line: self.line_no, message: e.to_string() }));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let result = serde_json::from_str::<Document>(&line)
                .map_err(|e| ProtocolError::Malformed { line: self.line_no, message: e.to_string() })
                .and_then(|doc| self.accept(doc));
            if let Err(e) = result {
                self.done = true;
                self.pending.clear();
                return Some(Err(e));
            }
        }
    }
}

/// One run's records, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub run_id: String,
    pub metadata: Value,
    pub records: Vec<Record>,
    pub exit_status: Option<String>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamSummary {
    pub runs: Vec<Run>,
    pub warnings: Vec<StreamWarning>,
}

/// Reads a whole feed and groups the records by run, in start order.
pub fn collect_runs<R: BufRead>(reader: R) -> Result<StreamSummary, ProtocolError> {
    let mut summary = StreamSummary::default();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for item in read_document_stream(reader) {
        match item? {
            StreamItem::Started { run_id, metadata } => {
                index.insert(run_id.clone(), summary.runs.len());
                summary.runs.push(Run { run_id, metadata, records: Vec::new(), exit_status: None, complete: false });
            }
            StreamItem::Record { run_id, record, .. } => summary.runs[index[&run_id]].records.push(record),
            StreamItem::Completed { run_id, exit_status, .. } => {
                let run = &mut summary.runs[index[&run_id]];
                run.exit_status = exit_status;
                run.complete = true;
            }
            StreamItem::Warning(w) => summary.warnings.push(w),
        }
    }
    Ok(summary)
}

/// Frames records as one well-formed run with seqs `0..=n+1`.
pub fn frame_run(run_id: &str, metadata: Value, records: &[Record], t0: f64) -> Vec<Document> {
    let doc = |doc_type, seq: usize, body| Document {
        doc_type,
        run_id: run_id.to_string(),
        seq: seq as u64,
        time: t0 + seq as f64,
        body,
    };
    let mut docs = vec![doc(DocType::Start, 0, metadata)];
    for (i, r) in records.iter().enumerate() {
        docs.push(doc(DocType::Event, i + 1, serde_json::to_value(r).expect("records serialize")));
    }
    docs.push(doc(DocType::Stop, records.len() + 1, serde_json::json!({ "exit_status": "success" })));
    docs
}

pub fn to_jsonl(docs: &[Document]) -> String {
    docs.iter().map(|d| serde_json::to_string(d).expect("documents serialize") + "\n").collect()
}
