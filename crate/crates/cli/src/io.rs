use std::path::Path;

use sha2::{Digest, Sha256};

use sentinel_core::{Record, Spectrum1D, TimeSeriesBundle};

use crate::error::{CliError, Result};

/// Records from one file, or from every visible file of a directory in
/// name order.
pub fn load_records(path: &Path) -> Result<Vec<Record>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| CliError::data(path.display(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(sentinel_ingest::parse_file(&f).map_err(|e| CliError::data(f.display(), e))?);
        }
        return Ok(out);
    }
    if !path.exists() {
        return Err(CliError::Data(format!("{} does not exist", path.display())));
    }
    sentinel_ingest::parse_file(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn series(records: Vec<Record>, path: &Path) -> Result<Vec<TimeSeriesBundle>> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Record::Series(b) => Ok(b),
            Record::Spectrum(_) => Err(CliError::Data(format!(
                "{}: record {} is a spectrum; this pipeline needs time series",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

pub fn spectra(records: Vec<Record>, path: &Path) -> Result<Vec<Spectrum1D>> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r {
            Record::Spectrum(s) => Ok(s),
            Record::Series(_) => Err(CliError::Data(format!(
                "{}: record {} is a time series; this pipeline needs spectra",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(dir.display(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::runtime(path.display(), e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `None` prints as `-`.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}
