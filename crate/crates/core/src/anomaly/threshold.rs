use crate::error::{Error, Result};

pub(crate) fn check_contamination(c: f64) -> Result<()> {
    if !(c > 0.0 && c < 0.5) {
        return Err(Error::InvalidParameter(format!("contamination must lie in (0, 0.5), got {c}")));
    }
    Ok(())
}

/// Cutoff that leaves `round(c·n)` of the training scores strictly above it.
///
/// The cut sits halfway between the last kept and the first flagged score,
/// so training points are never exactly on the boundary unless tied.
pub fn contamination_threshold(scores: &[f64], contamination: f64) -> Result<f64> {
    check_contamination(contamination)?;
    if scores.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidData("non-finite training score".into()));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let n_flag = crate::split::round_half_up(contamination * n as f64).min(n - 1);
    if n_flag == 0 {
        return Ok(s[n - 1]);
    }
    Ok(0.5 * (s[n - n_flag - 1] + s[n - n_flag]))
}
