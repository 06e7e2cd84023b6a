use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use sentinel_core::synth::{gen_ramp, to_jsonl, xafs_benchmark, xpcs_benchmark, RampSpec, CANONICAL_SEED};

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// 460 labeled time-series runs (400 normal, 60 anomalous)
    Xpcs,
    /// 711 labeled spectra with a 101-spectrum shifted-edge holdout
    Xafs,
    /// 50-temperature three-phase ramp with a switch at 400 C and true weights
    Ramp,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,

    /// Output directory (default: the data directory)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, default_value_t = CANONICAL_SEED)]
    pub seed: u64,

    /// Replace existing files
    #[arg(long)]
    pub force: bool,
}

pub fn run(config: &CliConfig, args: &SynthArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| config.data_dir.value.clone());
    let (name, records, sidecar) = match args.kind {
        SynthKind::Xpcs => ("xpcs", xpcs_benchmark(args.seed)?.records(), None),
        SynthKind::Xafs => {
            let b = xafs_benchmark(args.seed)?;
            let side = json!({ "seed": args.seed, "holdout": b.holdout, "edges": b.edges });
            ("xafs", b.records(), Some(("xafs.holdout.json", side)))
        }
        SynthKind::Ramp => {
            let spec = RampSpec::default();
            let d = gen_ramp(&spec, args.seed)?;
            let weights: Vec<Vec<f64>> = d.weights.row_iter().map(<[f64]>::to_vec).collect();
            let side = json!({
                "seed": args.seed,
                "temperatures": spec.temperatures,
                "t_c": spec.t_c,
                "switch_index": d.switch_index,
                "weights": weights,
            });
            ("ramp", d.records(), Some(("ramp.truth.json", side)))
        }
    };
    let data_path = out.join(format!("{name}.jsonl"));
    let mut targets = vec![data_path.clone()];
    if let Some((side_name, _)) = &sidecar {
        targets.push(out.join(side_name));
    }
    refuse_overwrite(&targets, args.force)?;

    let text = to_jsonl(&records);
    io::write(&data_path, &text)?;
    println!("wrote {} records to {} (sha256 {})", records.len(), data_path.display(), io::sha256_hex(text.as_bytes()));
    if let Some((side_name, value)) = sidecar {
        let p = out.join(side_name);
        io::write(&p, serde_json::to_string_pretty(&value).expect("json") + "\n")?;
        println!("wrote ground truth to {}", p.display());
    }
    Ok(())
}

fn refuse_overwrite(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| Path::exists(p)) {
        Some(p) => Err(CliError::Usage(format!("{} exists; pass --force to overwrite", p.display()))),
        None => Ok(()),
    }
}
