//! Behavioral descriptor mapping an evaluation report onto archive grid coordinates.
//!
//! Axis 1 buckets the rescheduling count N as {1, 2, 3-4, 5-8, 9+}. Axis 2 buckets the total
//! scheduling time on a log10 scale: below one unit is bucket 0, `[1, 10)` units bucket 1,
//! `[10, 100)` bucket 2, and so on up to the last bucket.

use policylab_core::evaluator::EvalReport;
use serde::{Deserialize, Serialize};

/// Number of rescheduling-count buckets.
pub const N_BUCKETS: usize = 5;

/// Archive grid dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    /// Buckets on the scheduling-time axis.
    pub sched_buckets: usize,
    /// Scheduling time mapped to the boundary of bucket 1, in seconds.
    pub sched_unit_seconds: f64,
}

impl Default for GridShape {
    fn default() -> Self {
        Self {
            sched_buckets: 6,
            sched_unit_seconds: 1.0,
        }
    }
}

impl GridShape {
    pub fn validate(&self) -> Result<(), String> {
        if self.sched_buckets < 1 {
            return Err("grid.sched_buckets must be >= 1".into());
        }
        if !(self.sched_unit_seconds > 0.0 && self.sched_unit_seconds.is_finite()) {
            return Err("grid.sched_unit_seconds must be finite and > 0".into());
        }
        Ok(())
    }

    /// Total number of cells.
    pub fn cells(&self) -> usize {
        N_BUCKETS * self.sched_buckets
    }
}

/// Archive coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub n_bucket: usize,
    pub sched_bucket: usize,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.n_bucket, self.sched_bucket)
    }
}

/// Bucket of a rescheduling count: 0 for N ≤ 1, then 2, 3-4, 5-8 and 9+.
pub fn n_bucket(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        2 => 1,
        3..=4 => 2,
        5..=8 => 3,
        _ => 4,
    }
}

/// Log10 bucket of a total scheduling time.
pub fn sched_bucket(sum_sched: f64, shape: &GridShape) -> usize {
    let units = sum_sched / shape.sched_unit_seconds;
    if !(units >= 1.0) {
        return 0;
    }
    let b = units.log10().floor() as usize + 1;
    b.min(shape.sched_buckets - 1)
}

/// Grid coordinates of a successful report; failed reports have no descriptor.
pub fn feature_descriptor(report: &EvalReport, shape: &GridShape) -> Option<Cell> {
    if !report.succeeded() {
        return None;
    }
    Some(Cell {
        n_bucket: n_bucket(report.n),
        sched_bucket: sched_bucket(report.sum_sched, shape),
    })
}
