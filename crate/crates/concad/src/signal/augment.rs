//! Batch-time augmentation: random circular time shift and reversal.
//!
//! One operation is drawn uniformly from the enabled set per call. The
//! shift is circular (the signal stays physiological) and is applied at
//! the same relative offset to the ECG, RRI and RPE arrays; reversal
//! flips all three. Labels and value multisets are preserved.

use super::segments::SegmentBundle;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    TimeShift,
    Reverse,
}

impl std::str::FromStr for AugmentOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<AugmentOp> {
        match s {
            "time_shift" => Ok(AugmentOp::TimeShift),
            "reverse" => Ok(AugmentOp::Reverse),
            other => Err(Error::Config(format!(
                "unknown augmentation `{other}` (expected time_shift or reverse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub ops: Vec<AugmentOp>,
    /// Largest shift as a fraction of the array length, in (0, 1].
    pub max_shift_fraction: f64,
}

impl Default for AugmentationSpec {
    fn default() -> AugmentationSpec {
        AugmentationSpec {
            ops: vec![AugmentOp::TimeShift, AugmentOp::Reverse],
            max_shift_fraction: 0.1,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::Config("augmentation needs at least one op".into()));
        }
        if !(0.0..=1.0).contains(&self.max_shift_fraction) || self.max_shift_fraction == 0.0 {
            return Err(Error::Config(format!(
                "max_shift_fraction must be in (0, 1], got {}",
                self.max_shift_fraction
            )));
        }
        Ok(())
    }
}

/// Circular left shift: element `i` of the result is element
/// `(i + t) mod len` of the input.
pub fn circular_shift(values: &[f64], t: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let t = t % values.len();
    let mut out = Vec::with_capacity(values.len());
    out.extend_from_slice(&values[t..]);
    out.extend_from_slice(&values[..t]);
    out
}

/// Produce an augmented view of a bundle.
pub fn augment(
    bundle: &SegmentBundle,
    spec: &AugmentationSpec,
    rng: &mut RngStream,
) -> Result<SegmentBundle> {
    spec.validate()?;
    let op = spec.ops[rng.uniform_usize(spec.ops.len())];
    let mut out = bundle.clone();
    match op {
        AugmentOp::Reverse => {
            out.ecg.reverse();
            out.rri.reverse();
            out.rpe.reverse();
        }
        AugmentOp::TimeShift => {
            let len = bundle.ecg.len();
            let max_t = ((spec.max_shift_fraction * len as f64).floor() as usize).max(1);
            let t = 1 + rng.uniform_usize(max_t);
            let frac = t as f64 / len as f64;
            out.ecg = circular_shift(&bundle.ecg, t);
            let t_expert =
                ((frac * bundle.rri.len() as f64).round() as usize) % bundle.rri.len().max(1);
            out.rri = circular_shift(&bundle.rri, t_expert);
            out.rpe = circular_shift(&bundle.rpe, t_expert);
        }
    }
    Ok(out)
}
