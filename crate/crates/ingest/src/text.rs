//! Two-column text patterns: `ordinate intensity` per line.
//!
//! `#` starts a comment (whole-line or trailing). Columns split on
//! whitespace or a comma.

use std::io::BufRead;

use sentinel_core::Spectrum1D;

use crate::error::{IngestError, Result};

pub fn read_two_column<R: BufRead>(reader: R) -> Result<Spectrum1D> {
    let mut grid = Vec::new();
    let mut intensity = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| IngestError::Parse(format!("line {n}: {e}")))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let cols: Vec<&str> = content.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if cols.len() != 2 {
            return Err(IngestError::Parse(format!("line {n}: expected 2 columns, found {}", cols.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| IngestError::Parse(format!("line {n}: `{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(IngestError::Parse(format!("line {n}: non-finite value `{s}`")));
            }
            Ok(v)
        };
        grid.push(parse(cols[0])?);
        intensity.push(parse(cols[1])?);
    }
    Ok(Spectrum1D::new(grid, intensity)?)
}
