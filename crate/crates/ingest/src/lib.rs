//! Deployment plumbing around the sentinel agents: a polling directory
//! watcher, a framed document-stream reader, report sinks with webhook
//! retry and model artifact persistence.

pub mod document;
pub mod error;
pub mod persist;
pub mod sinks;
pub mod text;
pub mod watcher;

pub use document::{collect_runs, read_document_stream, Document, DocType, ProtocolError, StreamItem, StreamWarning};
pub use error::{IngestError, Result};
pub use persist::{load_model, save_model, ModelArtifact, Pipeline, PipelineKind, ARTIFACT_SCHEMA_VERSION};
pub use sinks::{
    JsonlArchive, MemorySink, Message, RetryPolicy, Sink, SinkSet, WebhookConfig, WebhookFormat, WebhookSink,
    WebhookStats,
};
pub use text::read_two_column;
pub use watcher::{parse_file, WatchConfig, WatchHandle, WatchSummary, Watcher};
