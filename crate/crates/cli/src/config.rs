//! Effective configuration: flags over environment over file over defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use sentinel_ingest::WebhookFormat;

use crate::error::{CliError, Result};

pub const ENV_WEBHOOK_URL: &str = "SENTINEL_WEBHOOK_URL";
pub const ENV_DATA_DIR: &str = "SENTINEL_DATA_DIR";

pub const DEFAULT_DATA_DIR: &str = "data";
/// The paper's largest decomposition.
pub const DEFAULT_NMF_COMPONENTS: usize = 4;
pub const DEFAULT_POLL_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentChoice {
    Nmf,
    Anomaly,
    Classify,
}

impl AgentChoice {
    pub fn name(self) -> &'static str {
        match self {
            AgentChoice::Nmf => "nmf",
            AgentChoice::Anomaly => "anomaly",
            AgentChoice::Classify => "classify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatChoice {
    Json,
    Slack,
}

impl From<FormatChoice> for WebhookFormat {
    fn from(f: FormatChoice) -> Self {
        match f {
            FormatChoice::Json => WebhookFormat::Json,
            FormatChoice::Slack => WebhookFormat::Slack,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Root directory for datasets, models and reports [env: SENTINEL_DATA_DIR]
    #[arg(long, global = true, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Endpoint receiving reports [env: SENTINEL_WEBHOOK_URL]
    #[arg(long, global = true, value_name = "URL")]
    pub webhook_url: Option<String>,

    /// Webhook body layout
    #[arg(long, global = true, value_enum)]
    pub webhook_format: Option<FormatChoice>,

    /// Agent run by `watch` and the default for `eval`
    #[arg(long, global = true, value_enum)]
    pub agent: Option<AgentChoice>,

    /// Model artifact path (default: <data-dir>/<agent>-model.json)
    #[arg(long, global = true, value_name = "FILE")]
    pub artifact: Option<PathBuf>,

    /// NMF end-member count
    #[arg(long, global = true, value_name = "P")]
    pub components: Option<usize>,

    /// NMF ordinate window as grid indices LO:HI (half open)
    #[arg(long, global = true, value_name = "LO:HI")]
    pub window: Option<String>,

    /// Directory polled by `watch` (default: <data-dir>/incoming)
    #[arg(long, global = true, value_name = "DIR")]
    pub watch_dir: Option<PathBuf>,

    /// File-name pattern picked up by `watch`
    #[arg(long, global = true, value_name = "PATTERN")]
    pub glob: Option<String>,

    /// Watch poll interval in milliseconds
    #[arg(long, global = true, value_name = "MS")]
    pub poll_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data_dir: Option<PathBuf>,
    #[serde(default)]
    webhook: FileWebhook,
    #[serde(default)]
    agent: FileAgent,
    #[serde(default)]
    nmf: FileNmf,
    #[serde(default)]
    watch: FileWatch,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileWebhook {
    url: Option<String>,
    format: Option<FormatChoice>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileAgent {
    kind: Option<AgentChoice>,
    artifact: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNmf {
    components: Option<usize>,
    window: Option<[usize; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileWatch {
    dir: Option<PathBuf>,
    glob: Option<String>,
    poll_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    /// Derived from another field's value.
    Derived(&'static str),
    File(PathBuf),
    Env(&'static str),
    Flag(&'static str),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => f.write_str("default"),
            Source::Derived(from) => write!(f, "derived from {from}"),
            Source::File(p) => write!(f, "file {}", p.display()),
            Source::Env(v) => write!(f, "env {v}"),
            Source::Flag(n) => write!(f, "flag --{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setting<T> {
    pub value: T,
    pub source: Source,
}

impl<T> Setting<T> {
    fn new(value: T, source: Source) -> Self {
        Setting { value, source }
    }
}

/// Picks the first present layer: flag, env, file, default.
fn layer<T>(
    flag: Option<T>,
    flag_name: &'static str,
    env: Option<(T, &'static str)>,
    file: Option<T>,
    file_path: Option<&Path>,
    default: T,
) -> Setting<T> {
    if let Some(v) = flag {
        return Setting::new(v, Source::Flag(flag_name));
    }
    if let Some((v, var)) = env {
        return Setting::new(v, Source::Env(var));
    }
    match (file, file_path) {
        (Some(v), Some(p)) => Setting::new(v, Source::File(p.to_path_buf())),
        _ => Setting::new(default, Source::Default),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub data_dir: Setting<PathBuf>,
    pub webhook_url: Setting<Option<String>>,
    pub webhook_format: Setting<FormatChoice>,
    pub agent: Setting<AgentChoice>,
    pub artifact: Setting<PathBuf>,
    pub nmf_components: Setting<usize>,
    pub nmf_window: Setting<Option<(usize, usize)>>,
    pub watch_dir: Setting<PathBuf>,
    pub watch_glob: Setting<String>,
    pub poll_ms: Setting<u64>,
}

pub fn parse_window(s: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Usage(format!("window `{s}` must look like LO:HI with LO < HI"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo >= hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

impl CliConfig {
    /// Resolves every field. `env` looks up environment variables.
    pub fn resolve(flags: &GlobalArgs, env: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let fp = flags.config.as_deref();
        let nonempty = |var: &'static str| env(var).filter(|v| !v.trim().is_empty()).map(|v| (v, var));

        let data_dir = layer(
            flags.data_dir.clone(),
            "data-dir",
            nonempty(ENV_DATA_DIR).map(|(v, k)| (PathBuf::from(v), k)),
            file.data_dir,
            fp,
            PathBuf::from(DEFAULT_DATA_DIR),
        );
        let webhook_url = layer(
            flags.webhook_url.clone().map(Some),
            "webhook-url",
            nonempty(ENV_WEBHOOK_URL).map(|(v, k)| (Some(v), k)),
            file.webhook.url.map(Some),
            fp,
            None,
        );
        let webhook_format =
            layer(flags.webhook_format, "webhook-format", None, file.webhook.format, fp, FormatChoice::Json);
        let agent = layer(flags.agent, "agent", None, file.agent.kind, fp, AgentChoice::Anomaly);
        let derived_artifact = data_dir.value.join(format!("{}-model.json", agent.value.name()));
        let mut artifact = layer(flags.artifact.clone(), "artifact", None, file.agent.artifact, fp, derived_artifact);
        if artifact.source == Source::Default {
            artifact.source = Source::Derived("data_dir and agent");
        }
        let nmf_components = layer(
            flags.components,
            "components",
            None,
            file.nmf.components,
            fp,
            DEFAULT_NMF_COMPONENTS,
        );
        if nmf_components.value == 0 {
            return Err(CliError::Usage("NMF components must be at least 1".into()));
        }
        let flag_window = flags.window.as_deref().map(parse_window).transpose()?;
        let file_window = match file.nmf.window {
            Some([lo, hi]) if lo < hi => Some((lo, hi)),
            Some([lo, hi]) => return Err(CliError::Usage(format!("config nmf.window [{lo}, {hi}] needs lo < hi"))),
            None => None,
        };
        let nmf_window = layer(flag_window.map(Some), "window", None, file_window.map(Some), fp, None);
        let mut watch_dir =
            layer(flags.watch_dir.clone(), "watch-dir", None, file.watch.dir, fp, data_dir.value.join("incoming"));
        if watch_dir.source == Source::Default {
            watch_dir.source = Source::Derived("data_dir");
        }
        let watch_glob = layer(flags.glob.clone(), "glob", None, file.watch.glob, fp, "*".to_string());
        let poll_ms = layer(flags.poll_ms, "poll-ms", None, file.watch.poll_ms, fp, DEFAULT_POLL_MS);
        if poll_ms.value == 0 {
            return Err(CliError::Usage("poll interval must be positive".into()));
        }
        Ok(CliConfig {
            data_dir,
            webhook_url,
            webhook_format,
            agent,
            artifact,
            nmf_components,
            nmf_window,
            watch_dir,
            watch_glob,
            poll_ms,
        })
    }

    /// One line per field with its origin. The webhook URL is a secret, so
    /// only its scheme and host are shown.
    pub fn describe(&self) -> String {
        let url = match &self.webhook_url.value {
            Some(u) => redact_url(u),
            None => "<unset>".into(),
        };
        let window = match self.nmf_window.value {
            Some((lo, hi)) => format!("{lo}:{hi}"),
            None => "<full grid>".into(),
        };
        let rows: [(&str, String, &Source); 10] = [
            ("data_dir", self.data_dir.value.display().to_string(), &self.data_dir.source),
            ("webhook_url", url, &self.webhook_url.source),
            ("webhook_format", format!("{:?}", self.webhook_format.value).to_lowercase(), &self.webhook_format.source),
            ("agent", self.agent.value.name().to_string(), &self.agent.source),
            ("artifact", self.artifact.value.display().to_string(), &self.artifact.source),
            ("nmf_components", self.nmf_components.value.to_string(), &self.nmf_components.source),
            ("nmf_window", window, &self.nmf_window.source),
            ("watch_dir", self.watch_dir.value.display().to_string(), &self.watch_dir.source),
            ("watch_glob", self.watch_glob.value.clone(), &self.watch_glob.source),
            ("poll_ms", self.poll_ms.value.to_string(), &self.poll_ms.source),
        ];
        let mut out = String::from("effective configuration:\n");
        for (name, value, source) in rows {
            out.push_str(&format!("  {name:<15} = {value:<40} ({source})\n"));
        }
        out
    }
}

fn redact_url(u: &str) -> String {
    match u.split_once("://") {
        Some((scheme, rest)) => {
            let host = rest.split('/').next().unwrap_or("");
            format!("{scheme}://{host}/***")
        }
        None => "***".into(),
    }
}
