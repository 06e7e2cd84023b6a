//! Report sinks. A [`WebhookSink`] posts from a worker thread so a slow
//! endpoint never stalls ingestion.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use sentinel_core::agent::{Action, Directive, Report};

use crate::error::{IngestError, Result};

/// A Pause or Alert raised by an agent's ask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectiveNotice {
    pub timestamp: DateTime<Utc>,
    pub agent_id: String,
    /// File or run that triggered it.
    pub source: String,
    pub action: Action,
    pub reason: String,
}

impl DirectiveNotice {
    pub fn new(agent_id: &str, source: &str, directive: &Directive, timestamp: DateTime<Utc>) -> Self {
        DirectiveNotice {
            timestamp,
            agent_id: agent_id.to_string(),
            source: source.to_string(),
            action: directive.action,
            reason: directive.reason.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Message {
    Report(Report),
    Directive { directive: DirectiveNotice },
}

impl Message {
    pub fn directive(notice: DirectiveNotice) -> Self {
        Message::Directive { directive: notice }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    /// Pause and Alert jump the webhook queue.
    pub fn is_priority(&self) -> bool {
        matches!(self, Message::Directive { directive } if directive.action != Action::Continue)
    }

    /// `:glyph: summary`, for chat endpoints.
    pub fn slack_text(&self) -> String {
        match self {
            Message::Report(r) => format!(":{}: {}", r.glyph, r.summary),
            Message::Directive { directive: d } => {
                let (glyph, verb) = match d.action {
                    Action::Pause => ("double_vertical_bar", "PAUSE"),
                    Action::Alert => ("rotating_light", "ALERT"),
                    Action::Continue => ("arrow_forward", "CONTINUE"),
                };
                format!(":{glyph}: {verb} from {} on {}: {}", d.agent_id, d.source, d.reason)
            }
        }
    }
}

pub trait Sink: Send {
    fn name(&self) -> &str;

    fn dispatch(&mut self, message: &Message) -> Result<()>;

    /// Flushes pending work, waiting at most `deadline`.
    fn shutdown(&mut self, _deadline: Duration) -> Result<()> {
        Ok(())
    }
}

/// Appends every message as one JSON line.
pub struct JsonlArchive {
    path: PathBuf,
    file: File,
}

impl JsonlArchive {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| IngestError::io(&path, e))?;
        Ok(JsonlArchive { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Sink for JsonlArchive {
    fn name(&self) -> &str {
        "archive"
    }

    fn dispatch(&mut self, message: &Message) -> Result<()> {
        writeln!(self.file, "{}", message.to_json()).map_err(|e| IngestError::io(&self.path, e))
    }

    fn shutdown(&mut self, _deadline: Duration) -> Result<()> {
        self.file.flush().map_err(|e| IngestError::io(&self.path, e))
    }
}

/// Collects messages in memory; clones share the buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    messages: Arc<Mutex<Vec<Message>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn messages(&self) -> Vec<Message> {
        self.messages.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Sink for MemorySink {
    fn name(&self) -> &str {
        "memory"
    }

    fn dispatch(&mut self, message: &Message) -> Result<()> {
        self.messages.lock().unwrap_or_else(|e| e.into_inner()).push(message.clone());
        Ok(())
    }
}

/// Fans a message out to several sinks. A failing sink is logged and does
/// not stop the others.
#[derive(Default)]
pub struct SinkSet {
    sinks: Vec<Box<dyn Sink>>,
}

impl SinkSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, sink: impl Sink + 'static) -> Self {
        self.sinks.push(Box::new(sink));
        self
    }

    pub fn push(&mut self, sink: Box<dyn Sink>) {
        self.sinks.push(sink);
    }

    pub fn len(&self) -> usize {
        self.sinks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sinks.is_empty()
    }

    /// Returns how many sinks accepted the message.
    pub fn dispatch(&mut self, message: &Message) -> usize {
        let mut ok = 0;
        for s in &mut self.sinks {
            match s.dispatch(message) {
                Ok(()) => ok += 1,
                Err(e) => log::error!("sink {}: {e}", s.name()),
            }
        }
        ok
    }

    pub fn shutdown(&mut self, deadline: Duration) {
        for s in &mut self.sinks {
            if let Err(e) = s.shutdown(deadline) {
                log::error!("sink {} shutdown: {e}", s.name());
            }
        }
    }
}

// ---------------------------------------------------------------- webhook

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WebhookFormat {
    /// The message JSON as is.
    #[default]
    Json,
    /// `{"text": ":glyph: summary"}`.
    Slack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
    /// Total attempts, the first one included.
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_millis(500), factor: 2.0, cap: Duration::from_secs(30), max_attempts: 8 }
    }
}

impl RetryPolicy {
    /// Wait after failed attempt number `attempt` (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let secs = self.base.as_secs_f64() * self.factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }
}

#[derive(Debug, Clone)]
pub struct WebhookConfig {
    pub url: String,
    pub format: WebhookFormat,
    pub retry: RetryPolicy,
    /// Bound on each of the normal and priority lanes.
    pub capacity: usize,
    /// Per-request timeout.
    pub timeout: Duration,
    /// Undeliverable messages are appended here verbatim.
    pub dead_letter: PathBuf,
}

impl WebhookConfig {
    pub fn new(url: impl Into<String>, dead_letter: impl Into<PathBuf>) -> Self {
        WebhookConfig {
            url: url.into(),
            format: WebhookFormat::Json,
            retry: RetryPolicy::default(),
            capacity: 1000,
            timeout: Duration::from_secs(10),
            dead_letter: dead_letter.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WebhookStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub attempts: u64,
    pub dead_lettered: u64,
    /// Dropped from a full lane (also dead-lettered).
    pub overflowed: u64,
}

struct Pending {
    wire: String,
    verbatim: String,
}

#[derive(Default)]
struct Lanes {
    priority: VecDeque<Pending>,
    normal: VecDeque<Pending>,
    closing: Option<Instant>,
    stats: WebhookStats,
}

impl Lanes {
    fn pop(&mut self) -> Option<Pending> {
        self.priority.pop_front().or_else(|| self.normal.pop_front())
    }

    fn past_deadline(&self) -> bool {
        self.closing.is_some_and(|d| Instant::now() >= d)
    }
}

struct Shared {
    lanes: Mutex<Lanes>,
    wake: Condvar,
    dead_letter: Mutex<DeadLetter>,
}

impl Shared {
    fn lanes(&self) -> MutexGuard<'_, Lanes> {
        self.lanes.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn bury(&self, p: &Pending) {
        self.dead_letter.lock().unwrap_or_else(|e| e.into_inner()).append(&p.verbatim);
    }
}

struct DeadLetter {
    path: PathBuf,
}

impl DeadLetter {
    fn append(&mut self, line: &str) {
        let r = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}").and_then(|_| f.flush()));
        if let Err(e) = r {
            // nothing left to fall back on
            log::error!("dead-letter {}: {e}; lost message: {line}", self.path.display());
        }
    }
}

/// Posts messages to an HTTP endpoint with retries. Every message ends up
/// either acknowledged with a 2xx or in the dead-letter file.
pub struct WebhookSink {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
    capacity: usize,
    format: WebhookFormat,
}

impl WebhookSink {
    pub fn start(config: WebhookConfig) -> Result<Self> {
        if config.capacity == 0 {
            return Err(IngestError::Config("webhook queue capacity must be positive".into()));
        }
        if config.retry.max_attempts == 0 {
            return Err(IngestError::Config("webhook max attempts must be positive".into()));
        }
        if !(config.url.starts_with("http://") || config.url.starts_with("https://")) {
            return Err(IngestError::Config(format!("webhook URL `{}` is not http(s)", config.url)));
        }
        let shared = Arc::new(Shared {
            lanes: Mutex::new(Lanes::default()),
            wake: Condvar::new(),
            dead_letter: Mutex::new(DeadLetter { path: config.dead_letter.clone() }),
        });
        let worker_shared = Arc::clone(&shared);
        let capacity = config.capacity;
        let format = config.format;
        let worker = std::thread::Builder::new()
            .name("sentinel-webhook".into())
            .spawn(move || worker_loop(worker_shared, config))
            .map_err(|e| IngestError::io("<webhook worker>", e))?;
        Ok(WebhookSink { shared, worker: Some(worker), capacity, format })
    }

    pub fn stats(&self) -> WebhookStats {
        self.shared.lanes().stats
    }

    pub fn pending(&self) -> usize {
        let l = self.shared.lanes();
        l.priority.len() + l.normal.len()
    }

    fn enqueue(&self, message: &Message) {
        let verbatim = message.to_json();
        let wire = match self.format {
            WebhookFormat::Json => verbatim.clone(),
            WebhookFormat::Slack => serde_json::json!({ "text": message.slack_text() }).to_string(),
        };
        let mut lanes = self.shared.lanes();
        let lane = if message.is_priority() { &mut lanes.priority } else { &mut lanes.normal };
        let dropped = if lane.len() >= self.capacity { lane.pop_front() } else { None };
        lane.push_back(Pending { wire, verbatim });
        lanes.stats.enqueued += 1;
        if let Some(old) = dropped {
            lanes.stats.overflowed += 1;
            lanes.stats.dead_lettered += 1;
            drop(lanes);
            log::warn!("webhook queue full; oldest message moved to the dead-letter file");
            self.shared.bury(&old);
        } else {
            drop(lanes);
        }
        self.shared.wake.notify_all();
    }

    /// Stops accepting work and drains until `deadline`. Whatever is still
    /// queued then is dead-lettered.
    pub fn close(&mut self, deadline: Duration) -> WebhookStats {
        if let Some(worker) = self.worker.take() {
            self.shared.lanes().closing = Some(Instant::now() + deadline);
            self.shared.wake.notify_all();
            if worker.join().is_err() {
                log::error!("webhook worker panicked");
            }
            // anything the worker did not reach
            let mut lanes = self.shared.lanes();
            let rest: Vec<Pending> = std::iter::from_fn(|| lanes.pop()).collect();
            lanes.stats.dead_lettered += rest.len() as u64;
            drop(lanes);
            for p in &rest {
                self.shared.bury(p);
            }
        }
        self.stats()
    }
}

impl Sink for WebhookSink {
    fn name(&self) -> &str {
        "webhook"
    }

    fn dispatch(&mut self, message: &Message) -> Result<()> {
        if self.worker.is_none() {
            return Err(IngestError::Config("webhook sink is shut down".into()));
        }
        self.enqueue(message);
        Ok(())
    }

    fn shutdown(&mut self, deadline: Duration) -> Result<()> {
        let s = self.close(deadline);
        log::info!(
            "webhook: {} delivered, {} dead-lettered, {} attempts",
            s.delivered,
            s.dead_lettered,
            s.attempts
        );
        Ok(())
    }
}

impl Drop for WebhookSink {
    fn drop(&mut self) {
        self.close(Duration::ZERO);
    }
}

fn worker_loop(shared: Arc<Shared>, config: WebhookConfig) {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    loop {
        let next = {
            let mut lanes = shared.lanes();
            loop {
                if lanes.past_deadline() {
                    return;
                }
                if let Some(p) = lanes.pop() {
                    break p;
                }
                if lanes.closing.is_some() {
                    return;
                }
                lanes = shared.wake.wait(lanes).unwrap_or_else(|e| e.into_inner());
            }
        };
        deliver(&shared, &agent, &config, next);
    }
}

fn post(agent: &ureq::Agent, url: &str, body: &str) -> std::result::Result<u16, String> {
    let resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    // drain so the connection can be reused
    let _ = resp.into_body().read_to_string();
    Ok(status)
}

/// Attempts one message until success, exhaustion or the close deadline.
fn deliver(shared: &Shared, agent: &ureq::Agent, config: &WebhookConfig, p: Pending) {
    for attempt in 1..=config.retry.max_attempts {
        shared.lanes().stats.attempts += 1;
        match post(agent, &config.url, &p.wire) {
            Ok(code) if (200..300).contains(&code) => {
                shared.lanes().stats.delivered += 1;
                return;
            }
            Ok(code) => log::warn!("webhook attempt {attempt}: HTTP {code}"),
            Err(e) => log::warn!("webhook attempt {attempt}: {e}"),
        }
        if attempt == config.retry.max_attempts {
            break;
        }
        // back off, but give up early if the close deadline passes
        let until = Instant::now() + config.retry.delay_after(attempt);
        let mut lanes = shared.lanes();
        loop {
            if lanes.past_deadline() {
                lanes.stats.dead_lettered += 1;
                drop(lanes);
                shared.bury(&p);
                return;
            }
            let now = Instant::now();
            if now >= until {
                break;
            }
            let wait = match lanes.closing {
                Some(d) => (until - now).min(d.saturating_duration_since(now)),
                None => until - now,
            };
            lanes = shared.wake.wait_timeout(lanes, wait).unwrap_or_else(|e| e.into_inner()).0;
        }
    }
    log::error!("webhook: giving up after {} attempts; message dead-lettered", config.retry.max_attempts);
    shared.lanes().stats.dead_lettered += 1;
    shared.bury(&p);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_schedule() {
        let r = RetryPolicy::default();
        let d: Vec<f64> = (1..8).map(|a| r.delay_after(a).as_secs_f64()).collect();
        assert_eq!(d, vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 30.0]);
    }

    #[test]
    fn only_pause_and_alert_are_priority() {
        let n = |action| {
            Message::directive(DirectiveNotice {
                timestamp: Utc::now(),
                agent_id: "a".into(),
                source: "f".into(),
                action,
                reason: "r".into(),
            })
        };
        assert!(n(Action::Pause).is_priority());
        assert!(n(Action::Alert).is_priority());
        assert!(!n(Action::Continue).is_priority());
    }

    #[test]
    fn rejects_bad_urls() {
        assert!(WebhookSink::start(WebhookConfig::new("ftp://x", "/tmp/dl")).is_err());
    }
}
