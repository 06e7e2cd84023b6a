use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Args;

use sentinel_core::agent::{Agent, AnomalyAgent, ClassifierAgent, NmfAgent, DEFAULT_PAUSE_AFTER};
use sentinel_core::nmf::NmfConfig;
use sentinel_ingest::{load_model, JsonlArchive, Pipeline, SinkSet, WatchConfig, Watcher, WebhookConfig, WebhookSink};

use crate::config::{AgentChoice, CliConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Args)]
pub struct WatchArgs {
    /// Report archive, one JSON message per line (default: <data-dir>/reports.jsonl)
    #[arg(long, value_name = "FILE")]
    pub archive: Option<PathBuf>,

    /// Undeliverable webhook messages (default: <data-dir>/dead-letter.jsonl)
    #[arg(long, value_name = "FILE")]
    pub dead_letter: Option<PathBuf>,

    /// Seconds allowed for draining the webhook queue on shutdown
    #[arg(long, value_name = "SECS", default_value_t = 10.0)]
    pub drain_secs: f64,

    /// Anomaly agent: consecutive anomalous runs before it asks to pause
    #[arg(long, value_name = "N", default_value_t = DEFAULT_PAUSE_AFTER)]
    pub pause_after: usize,

    /// Stop after this many files have been handled
    #[arg(long, value_name = "N")]
    pub stop_after: Option<u64>,

    /// Stop after this many seconds
    #[arg(long, value_name = "SECS")]
    pub timeout_secs: Option<f64>,
}

fn build_agent(config: &CliConfig, args: &WatchArgs) -> Result<Box<dyn Agent>> {
    let kind = config.agent.value;
    if kind == AgentChoice::Nmf {
        let mut nmf = NmfConfig::new(config.nmf_components.value);
        if let Some((lo, hi)) = config.nmf_window.value {
            nmf = nmf.windowed(lo, hi).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        return Ok(Box::new(NmfAgent::new("nmf", nmf).map_err(|e| CliError::Usage(e.to_string()))?));
    }
    let path = &config.artifact.value;
    if !path.exists() {
        return Err(CliError::Data(format!(
            "model artifact {} does not exist; run `sentinel train {}` first",
            path.display(),
            kind.name()
        )));
    }
    let pipeline = Pipeline::from_artifact(&load_model(path)?)?;
    match (kind, pipeline) {
        (AgentChoice::Anomaly, Pipeline::Anomaly(p)) => Ok(Box::new(
            AnomalyAgent::new("anomaly", p).with_pause_after(args.pause_after).map_err(|e| CliError::Usage(e.to_string()))?,
        )),
        (AgentChoice::Classify, Pipeline::Classify(p)) => Ok(Box::new(ClassifierAgent::new("classify", p))),
        (k, p) => Err(CliError::Usage(format!(
            "agent `{}` cannot run the {} model in {}",
            k.name(),
            p.kind(),
            path.display()
        ))),
    }
}

pub fn run(config: &CliConfig, args: &WatchArgs) -> Result<()> {
    if !(args.drain_secs >= 0.0 && args.drain_secs.is_finite()) {
        return Err(CliError::Usage("--drain-secs must be a non-negative number".into()));
    }
    let agent = build_agent(config, args)?;
    let data_dir = &config.data_dir.value;
    let archive = args.archive.clone().unwrap_or_else(|| data_dir.join("reports.jsonl"));
    let dead_letter = args.dead_letter.clone().unwrap_or_else(|| data_dir.join("dead-letter.jsonl"));
    for p in [&archive, &dead_letter] {
        if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d).map_err(|e| CliError::runtime(d.display(), e))?;
        }
    }

    let mut sinks = SinkSet::new().with(JsonlArchive::open(&archive)?);
    if let Some(url) = &config.webhook_url.value {
        let mut wh = WebhookConfig::new(url.clone(), &dead_letter);
        wh.format = config.webhook_format.value.into();
        sinks.push(Box::new(WebhookSink::start(wh)?));
    }
    let watch = WatchConfig::new(&config.watch_dir.value)
        .with_glob(config.watch_glob.value.clone())
        .with_poll_interval(Duration::from_millis(config.poll_ms.value));
    if !watch.dir.is_dir() {
        return Err(CliError::Usage(format!("watch directory {} does not exist", watch.dir.display())));
    }
    let mut watcher = Watcher::new(watch, agent, sinks)?;

    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install the interrupt handler: {e}");
    }
    let deadline = args.timeout_secs.map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));
    eprintln!("watching {} (ctrl-c to stop)", config.watch_dir.value.display());

    const SLICE: Duration = Duration::from_millis(20);
    loop {
        for path in watcher.poll_once().handled {
            log::info!("handled {}", path.display());
        }
        let done = |w: &Watcher| {
            stop.load(Ordering::SeqCst)
                || args.stop_after.is_some_and(|n| w.summary().files_seen >= n)
                || deadline.is_some_and(|d| Instant::now() >= d)
        };
        if done(&watcher) {
            break;
        }
        let delay = watcher.next_delay();
        let start = Instant::now();
        while start.elapsed() < delay && !done(&watcher) {
            std::thread::sleep(SLICE.min(delay.saturating_sub(start.elapsed())));
        }
        if done(&watcher) {
            break;
        }
    }
    let summary = watcher.finish(Duration::from_secs_f64(args.drain_secs));
    println!("watch summary: {summary}");
    Ok(())
}
