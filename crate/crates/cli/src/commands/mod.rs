pub mod covariance;
pub mod norms;
pub mod quadform;
pub mod sample;
pub mod sketch;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sparse_hw::quadform_mc::{default_slope_window, EmpiricalTail};

use crate::CliError;

/// Inner-loop work (samples × matrix entries) a single run may request.
pub const WORK_BUDGET: f64 = 2e11;

pub fn check_work(samples: usize, per_sample: usize) -> Result<(), CliError> {
    let work = samples as f64 * per_sample as f64;
    if work > WORK_BUDGET {
        Err(CliError::Budget(format!("{work:e} operations requested, limit is {WORK_BUDGET:e}")))
    } else {
        Ok(())
    }
}

/// Grid indices whose survival lies in `[lo, hi]`; the default window otherwise.
pub fn survival_window(tail: &EmpiricalTail, bounds: Option<[f64; 2]>) -> Range<usize> {
    match bounds {
        None => default_slope_window(tail),
        Some([lo, hi]) => {
            let idx: Vec<usize> = (0..tail.survival.len()).filter(|&k| (lo..=hi).contains(&tail.survival[k])).collect();
            match (idx.first(), idx.last()) {
                (Some(&a), Some(&b)) => a..b + 1,
                _ => 0..0,
            }
        }
    }
}

/// Calibrated dominance settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominanceOptions {
    /// Bound family to compare against; the refined sparse bound when α ≤ 1,
    /// the two-regime sparse bound otherwise.
    pub bound: Option<String>,
    pub rel_tol: f64,
    /// Survival range `[lo, hi]` of the checked window.
    pub survival_window: Option<[f64; 2]>,
}

impl Default for DominanceOptions {
    fn default() -> Self {
        Self {
            bound: None,
            rel_tol: 0.05,
            survival_window: None,
        }
    }
}

/// Expected far-tail exponent of `−log S` against `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeCheck {
    pub expected: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub survival_window: Option<[f64; 2]>,
}
