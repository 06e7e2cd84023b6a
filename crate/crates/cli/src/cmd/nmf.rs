use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use sentinel_core::agent::{Agent, NmfAgent};
use sentinel_core::nmf::{NmfConfig, NmfReport};
use sentinel_core::Record;

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Args)]
pub struct NmfArgs {
    /// Spectra: a JSONL file, a document stream, or a directory of pattern files
    /// (default: <data-dir>/ramp.jsonl)
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,

    /// Snapshot directory (default: <data-dir>/nmf)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Seed for the factor initialization
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Replace an existing snapshot directory
    #[arg(long)]
    pub force: bool,
}

pub fn run(config: &CliConfig, args: &NmfArgs) -> Result<()> {
    let data = args.data.clone().unwrap_or_else(|| config.data_dir.value.join("ramp.jsonl"));
    let out = args.out.clone().unwrap_or_else(|| config.data_dir.value.join("nmf"));
    if out.exists() && std::fs::read_dir(&out).map(|mut d| d.next().is_some()).unwrap_or(false) && !args.force {
        return Err(CliError::Usage(format!("{} is not empty; pass --force to overwrite", out.display())));
    }
    let spectra = io::spectra(io::load_records(&data)?, &data)?;
    if spectra.is_empty() {
        return Err(CliError::Data(format!("{} holds no spectra", data.display())));
    }

    let mut nmf = NmfConfig::new(config.nmf_components.value).with_seed(args.seed);
    if let Some((lo, hi)) = config.nmf_window.value {
        nmf = nmf.windowed(lo, hi).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut agent = NmfAgent::new("nmf", nmf).map_err(|e| CliError::Usage(e.to_string()))?;
    let width = spectra.len().to_string().len().max(4);
    for (i, s) in spectra.into_iter().enumerate() {
        let source = format!("{}#{}", data.display(), i + 1);
        agent.tell_from(&Record::Spectrum(s), Some(&source))?;
        let report = agent.report()?;
        let diag = agent.model().report()?;
        let dir = out.join(format!("{:0width$}", i + 1));
        write_snapshot(&dir, &diag, &json!({ "update": i + 1, "window": diag.window, "report": report }))?;
        println!("[{}] {}", i + 1, report.summary);
    }
    println!("snapshots written to {}", out.display());
    Ok(())
}

/// components.csv, weights.csv, residuals.csv and report.json.
fn write_snapshot(dir: &Path, r: &NmfReport, report: &serde_json::Value) -> Result<()> {
    let p = r.components.len();
    let comp_cols: Vec<String> = (0..p).map(|j| format!("component_{j}")).collect();
    // already restricted to the window
    let grid = &r.grid;

    let mut components = format!("x,{}\n", comp_cols.join(","));
    for (k, x) in grid.iter().enumerate() {
        let _ = write!(components, "{x}");
        for c in &r.components {
            let _ = write!(components, ",{}", c[k]);
        }
        components.push('\n');
    }

    let weight_cols: Vec<String> = (0..p).map(|j| format!("weight_{j}")).collect();
    let mut weights = format!("pattern,{},{},dominant,rel_error\n", r.meta_key, weight_cols.join(","));
    for (i, row) in r.weights.iter().enumerate() {
        let meta = r.meta_values[i].map(|v| v.to_string()).unwrap_or_default();
        let _ = write!(weights, "{},{meta}", r.row_index[i]);
        for w in row {
            let _ = write!(weights, ",{w}");
        }
        let _ = writeln!(weights, ",{},{}", r.dominant[i], r.rel_errors[i]);
    }

    let res_cols: Vec<String> = r.row_index.iter().map(|i| format!("pattern_{i}")).collect();
    let mut residuals = format!("x,{}\n", res_cols.join(","));
    for (k, x) in grid.iter().enumerate() {
        let _ = write!(residuals, "{x}");
        for row in &r.residuals {
            let _ = write!(residuals, ",{}", row[k]);
        }
        residuals.push('\n');
    }

    io::write(&dir.join("components.csv"), components)?;
    io::write(&dir.join("weights.csv"), weights)?;
    io::write(&dir.join("residuals.csv"), residuals)?;
    io::write(&dir.join("report.json"), serde_json::to_string_pretty(report).expect("json") + "\n")
}
