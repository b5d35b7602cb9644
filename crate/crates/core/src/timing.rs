//! Scheduling-time accounting: wall-clock or deterministic work-based timers, and budgets.

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

/// How scheduling time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimerModel {
    /// Real elapsed time.
    Wall,
    /// A fixed charge per unit of scheduler work (nodes, evaluations).
    Work { seconds_per_unit: f64 },
}

impl Default for TimerModel {
    fn default() -> Self {
        TimerModel::Work {
            seconds_per_unit: 1e-3,
        }
    }
}

impl TimerModel {
    /// Seconds charged for `work` units that took `elapsed` of real time.
    pub fn charge(&self, work: u64, elapsed: Duration) -> f64 {
        match self {
            TimerModel::Wall => elapsed.as_secs_f64(),
            TimerModel::Work { seconds_per_unit } => work as f64 * seconds_per_unit,
        }
    }
}

/// Why a search stopped before proving optimality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TimeBudget,
    NodeLimit,
    Cancelled,
}

/// A running budget for one scheduler invocation.
#[derive(Debug)]
pub struct Budget<'a> {
    timer: TimerModel,
    limit_seconds: f64,
    node_limit: Option<u64>,
    cancel: Option<&'a AtomicBool>,
    start: Instant,
    work: u64,
}

impl<'a> Budget<'a> {
    pub fn new(timer: TimerModel, limit_seconds: f64) -> Self {
        Self {
            timer,
            limit_seconds,
            node_limit: None,
            cancel: None,
            start: Instant::now(),
            work: 0,
        }
    }

    /// A budget that never runs out on its own.
    pub fn unlimited(timer: TimerModel) -> Self {
        Self::new(timer, f64::INFINITY)
    }

    pub fn with_node_limit(mut self, limit: Option<u64>) -> Self {
        self.node_limit = limit;
        self
    }

    pub fn with_cancel(mut self, cancel: Option<&'a AtomicBool>) -> Self {
        self.cancel = cancel;
        self
    }

    /// Records units of work.
    pub fn tick(&mut self, units: u64) {
        self.work += units;
    }

    pub fn work(&self) -> u64 {
        self.work
    }

    /// Seconds charged so far under the timer model.
    pub fn charged(&self) -> f64 {
        self.timer.charge(self.work, self.start.elapsed())
    }

    /// Returns the reason the budget is spent, if it is.
    pub fn exhausted(&self) -> Option<StopReason> {
        if self.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Some(StopReason::Cancelled);
        }
        if self.node_limit.is_some_and(|limit| self.work >= limit) {
            return Some(StopReason::NodeLimit);
        }
        if self.charged() >= self.limit_seconds {
            return Some(StopReason::TimeBudget);
        }
        None
    }
}
