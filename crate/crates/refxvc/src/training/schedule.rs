//! Noam learning-rate schedule: linear ramp to the peak at `warmup`, then
//! inverse-square-root decay, normalized so the peak equals `base_lr`.

use crate::error::{Error, Result};

/// `lr(step) = base_lr · min(step / warmup, √(warmup / step))`, 1-based.
pub fn noam_lr(step: u64, base_lr: f64, warmup: u64) -> Result<f64> {
    if step < 1 {
        return Err(Error::InvalidInput("schedule step must be ≥ 1".into()));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(base_lr * (s / w).min((w / s).sqrt()))
}
