//! Polling directory watcher that feeds new files to an agent.
//!
//! A file is handled once its size has held still for `debounce_polls`
//! consecutive polls. Ready files go in modification-time order. Each file
//! yields one report; a Pause or Alert from the agent follows as a priority
//! message. Files that cannot be parsed or told are listed in the quarantine
//! sidecar and skipped. Hidden files (leading `.`) are ignored, which keeps
//! the sidecar and editor temporaries out of the feed.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime};

use chrono::Utc;
use serde::Serialize;
use serde_json::json;

use sentinel_core::agent::{glyph_code, Action, Agent, Report, Status, REPORT_SCHEMA_VERSION};
use sentinel_core::data::read_records;
use sentinel_core::Record;

use crate::document::collect_runs;
use crate::error::{IngestError, Result};
use crate::sinks::{DirectiveNotice, Message, SinkSet};
use crate::text::read_two_column;

pub const QUARANTINE_FILE: &str = ".sentinel-quarantine.jsonl";
const MAX_OUTAGE_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq)]
pub struct WatchConfig {
    pub dir: PathBuf,
    /// Matched against file names, not paths.
    pub glob: String,
    pub poll_interval: Duration,
    pub debounce_polls: u32,
    pub quarantine: PathBuf,
}

impl WatchConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        WatchConfig {
            quarantine: dir.join(QUARANTINE_FILE),
            dir,
            glob: "*".into(),
            poll_interval: Duration::from_millis(500),
            debounce_polls: 2,
        }
    }

    pub fn with_glob(mut self, glob: impl Into<String>) -> Self {
        self.glob = glob.into();
        self
    }

    pub fn with_poll_interval(mut self, d: Duration) -> Self {
        self.poll_interval = d;
        self
    }

    pub fn with_debounce_polls(mut self, n: u32) -> Self {
        self.debounce_polls = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.poll_interval.is_zero() {
            return Err(IngestError::Config("poll interval must be positive".into()));
        }
        glob::Pattern::new(&self.glob).map_err(|e| IngestError::Config(format!("glob `{}`: {e}", self.glob)))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WatchSummary {
    pub files_seen: u64,
    pub reports_sent: u64,
    pub alarms: u64,
    pub quarantined: u64,
}

impl std::fmt::Display for WatchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "files seen {} / reports sent {} / alarms {} / quarantined {}",
            self.files_seen, self.reports_sent, self.alarms, self.quarantined
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuarantineEntry {
    pub time: String,
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Debug)]
struct Tracked {
    size: u64,
    mtime: SystemTime,
    stable: u32,
    done: bool,
}

/// What one poll did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PollOutcome {
    /// Files handled this poll, in handling order.
    pub handled: Vec<PathBuf>,
    pub directory_missing: bool,
}

pub struct Watcher {
    config: WatchConfig,
    pattern: glob::Pattern,
    agent: Box<dyn Agent>,
    sinks: SinkSet,
    tracked: HashMap<PathBuf, Tracked>,
    summary: WatchSummary,
    quarantine_log: Vec<QuarantineEntry>,
    outage_polls: u32,
    own_sequence: u64,
}

impl Watcher {
    pub fn new(config: WatchConfig, agent: Box<dyn Agent>, sinks: SinkSet) -> Result<Self> {
        config.validate()?;
        if !config.dir.is_dir() {
            return Err(IngestError::Config(format!("watch directory {} does not exist", config.dir.display())));
        }
        let pattern = glob::Pattern::new(&config.glob).expect("validated above");
        Ok(Watcher {
            config,
            pattern,
            agent,
            sinks,
            tracked: HashMap::new(),
            summary: WatchSummary::default(),
            quarantine_log: Vec::new(),
            outage_polls: 0,
            own_sequence: 0,
        })
    }

    pub fn summary(&self) -> WatchSummary {
        self.summary
    }

    pub fn quarantine_entries(&self) -> &[QuarantineEntry] {
        &self.quarantine_log
    }

    pub fn agent(&self) -> &dyn Agent {
        self.agent.as_ref()
    }

    /// Delay before the next poll; grows while the directory is missing.
    pub fn next_delay(&self) -> Duration {
        if self.outage_polls == 0 {
            return self.config.poll_interval;
        }
        let factor = 2u32.saturating_pow(self.outage_polls.min(16));
        self.config.poll_interval.saturating_mul(factor).min(MAX_OUTAGE_BACKOFF.max(self.config.poll_interval))
    }

    pub fn poll_once(&mut self) -> PollOutcome {
        let entries = match std::fs::read_dir(&self.config.dir) {
            Ok(e) => e,
            Err(e) => {
                if self.outage_polls == 0 {
                    self.warn_directory(&e.to_string());
                }
                self.outage_polls += 1;
                return PollOutcome { handled: Vec::new(), directory_missing: true };
            }
        };
        self.outage_polls = 0;

        let mut ready: Vec<(SystemTime, PathBuf)> = Vec::new();
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with('.') || !self.pattern.matches(&name) {
                continue;
            }
            let path = entry.path();
            let Ok(meta) = entry.metadata() else { continue };
            if !meta.is_file() {
                continue;
            }
            let (size, mtime) = (meta.len(), meta.modified().unwrap_or(SystemTime::UNIX_EPOCH));
            let fresh = !self.tracked.contains_key(&path);
            let t = self.tracked.entry(path.clone()).or_insert(Tracked { size, mtime, stable: 0, done: false });
            if t.done {
                continue;
            }
            if fresh {
                // first sighting starts the window
            } else if t.size == size && t.mtime == mtime {
                t.stable += 1;
            } else {
                *t = Tracked { size, mtime, stable: 0, done: false };
            }
            if t.stable >= self.config.debounce_polls {
                ready.push((mtime, path));
            }
        }
        ready.sort();

        let mut handled = Vec::with_capacity(ready.len());
        for (_, path) in ready {
            if let Some(t) = self.tracked.get_mut(&path) {
                t.done = true;
            }
            self.handle_file(&path);
            handled.push(path);
        }
        PollOutcome { handled, directory_missing: false }
    }

    fn handle_file(&mut self, path: &Path) {
        self.summary.files_seen += 1;
        let source = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let records = match parse_file(path) {
            Ok(r) if r.is_empty() => return self.quarantine(path, "file holds no records".into()),
            Ok(r) => r,
            Err(e) => return self.quarantine(path, e.to_string()),
        };
        for (i, r) in records.iter().enumerate() {
            if let Err(e) = self.agent.tell_from(r, Some(&source)) {
                return self.quarantine(path, format!("record {}: {e}", i + 1));
            }
        }
        let report = match self.agent.report() {
            Ok(r) => r,
            Err(e) => return self.quarantine(path, format!("report: {e}")),
        };
        if report.status == Status::Alarm {
            self.summary.alarms += 1;
        }
        self.sinks.dispatch(&Message::Report(report));
        self.summary.reports_sent += 1;
        let directive = self.agent.ask();
        if matches!(directive.action, Action::Pause | Action::Alert) {
            let notice = DirectiveNotice::new(self.agent.id(), &source, &directive, Utc::now());
            self.sinks.dispatch(&Message::directive(notice));
        }
    }

    fn quarantine(&mut self, path: &Path, reason: String) {
        log::warn!("quarantined {}: {reason}", path.display());
        let entry = QuarantineEntry { time: Utc::now().to_rfc3339(), file: path.to_path_buf(), reason };
        let line = serde_json::to_string(&entry).expect("entries serialize");
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.config.quarantine)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::error!("quarantine sidecar {}: {e}", self.config.quarantine.display());
        }
        self.quarantine_log.push(entry);
        self.summary.quarantined += 1;
    }

    fn warn_directory(&mut self, error: &str) {
        log::warn!("watch directory {} unavailable: {error}", self.config.dir.display());
        self.own_sequence += 1;
        let report = Report {
            schema_version: REPORT_SCHEMA_VERSION.to_string(),
            timestamp: Utc::now(),
            agent_id: format!("watcher:{}", self.config.dir.display()),
            kind: self.agent.kind(),
            sequence_number: self.own_sequence,
            status: Status::Warning,
            glyph: glyph_code(Status::Warning).to_string(),
            summary: format!("watch directory {} is unavailable; retrying with backoff", self.config.dir.display()),
            payload: json!({ "directory": self.config.dir, "error": error }),
        };
        self.sinks.dispatch(&Message::Report(report));
    }

    /// Polls until `stop` is set, then drains the sinks within `drain`.
    pub fn run(mut self, stop: &AtomicBool, drain: Duration) -> WatchSummary {
        const SLICE: Duration = Duration::from_millis(20);
        while !stop.load(Ordering::SeqCst) {
            self.poll_once();
            let mut waited = Duration::ZERO;
            let delay = self.next_delay();
            while waited < delay && !stop.load(Ordering::SeqCst) {
                let step = SLICE.min(delay - waited);
                std::thread::sleep(step);
                waited += step;
            }
        }
        self.finish(drain)
    }

    /// Drains the sinks within `drain` and returns the final tally.
    pub fn finish(mut self, drain: Duration) -> WatchSummary {
        self.sinks.shutdown(drain);
        self.summary
    }
}

/// Reads a whole file as records: a document stream, record JSON lines or
/// two-column text, chosen by the first non-blank line.
pub fn parse_file(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    let Some(first) = first else { return Ok(Vec::new()) };
    if first.starts_with('{') {
        let head: serde_json::Value =
            serde_json::from_str(first).map_err(|e| IngestError::Parse(format!("line 1: {e}")))?;
        if head.get("doc_type").is_some() {
            let runs = collect_runs(BufReader::new(text.as_bytes()))?;
            for w in &runs.warnings {
                log::warn!("{}: {w:?}", path.display());
            }
            return Ok(runs.runs.into_iter().flat_map(|r| r.records).collect());
        }
        return Ok(read_records(BufReader::new(text.as_bytes()))?);
    }
    Ok(vec![Record::Spectrum(read_two_column(text.as_bytes())?)])
}

/// A watcher running on its own thread.
pub struct WatchHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<WatchSummary>>,
}

impl WatchHandle {
    pub fn spawn(watcher: Watcher, drain: Duration) -> Result<Self> {
        Self::spawn_with_flag(watcher, drain, Arc::new(AtomicBool::new(false)))
    }

    /// Uses an existing flag, e.g. one set by a signal handler.
    pub fn spawn_with_flag(watcher: Watcher, drain: Duration, stop: Arc<AtomicBool>) -> Result<Self> {
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("sentinel-watch".into())
            .spawn(move || watcher.run(&flag, drain))
            .map_err(|e| IngestError::io("<watch thread>", e))?;
        Ok(WatchHandle { stop, thread: Some(thread) })
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(|t| t.is_finished())
    }

    /// Signals the loop and waits for the drain to finish.
    pub fn stop(mut self) -> WatchSummary {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    pub fn join(&mut self) -> WatchSummary {
        match self.thread.take().map(JoinHandle::join) {
            Some(Ok(s)) => s,
            Some(Err(_)) => {
                log::error!("watch thread panicked");
                WatchSummary::default()
            }
            None => WatchSummary::default(),
        }
    }
}

impl Drop for WatchHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }
}
