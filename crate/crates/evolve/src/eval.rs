//! Candidate evaluation behind a trait, and the timeout wrapper that bounds each evaluation.

use policylab_core::catalog::Catalog;
use policylab_core::evaluator::{replay_cancellable, EvalReport, ReplayConfig};
use policylab_core::policy::PolicyGenome;
use policylab_core::traces::Trace;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Something that scores a genome. Implementations must be free of shared mutable state so an
/// abandoned evaluation can be left to wind down on its own.
pub trait Evaluate: Send + Sync {
    /// Evaluates `genome`, polling `cancel` where possible.
    fn evaluate(&self, genome: &PolicyGenome, cancel: &AtomicBool) -> EvalReport;

    /// Identifier of the snapshot being evaluated.
    fn trace_id(&self) -> &str;
}

/// Trace replay under the analytical simulator.
#[derive(Debug, Clone)]
pub struct TraceEvaluator {
    pub trace: Trace,
    pub catalog: Catalog,
    pub config: ReplayConfig,
}

impl TraceEvaluator {
    pub fn new(trace: Trace, catalog: Catalog, config: ReplayConfig) -> Self {
        Self { trace, catalog, config }
    }
}

impl Evaluate for TraceEvaluator {
    fn evaluate(&self, genome: &PolicyGenome, cancel: &AtomicBool) -> EvalReport {
        match replay_cancellable(genome, &self.trace, &self.catalog, &self.config, Some(cancel)) {
            Ok(report) => report,
            Err(e) => EvalReport::failed(
                &genome.id,
                &self.trace.id,
                e.to_string(),
                self.config.sim.infeasible_penalty_seconds,
            ),
        }
    }

    fn trace_id(&self) -> &str {
        &self.trace.id
    }
}

/// Outcome of a time-bounded evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum TimedEval {
    Finished { report: EvalReport, seconds: f64 },
    TimedOut { seconds: f64 },
}

/// An evaluation running on its own worker thread.
#[derive(Debug)]
pub struct PendingEval {
    rx: mpsc::Receiver<EvalReport>,
    cancel: Arc<AtomicBool>,
    started: Instant,
    timeout: Duration,
}

impl PendingEval {
    /// Waits until the evaluation finishes or its timeout expires. On expiry the worker is
    /// told to stop and abandoned.
    pub fn wait(self) -> TimedEval {
        let remaining = self.timeout.saturating_sub(self.started.elapsed());
        match self.rx.recv_timeout(remaining) {
            Ok(report) => TimedEval::Finished {
                report,
                seconds: self.started.elapsed().as_secs_f64(),
            },
            Err(mpsc::RecvTimeoutError::Timeout) => {
                self.cancel.store(true, Ordering::Relaxed);
                TimedEval::TimedOut {
                    seconds: self.started.elapsed().as_secs_f64(),
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => TimedEval::Finished {
                report: EvalReport::failed("", "", "evaluation worker panicked".into(), f64::INFINITY),
                seconds: self.started.elapsed().as_secs_f64(),
            },
        }
    }
}

/// Starts `thunk` on a worker thread with a cancellation flag and a deadline.
pub fn spawn_eval<F>(thunk: F, timeout: Duration) -> PendingEval
where
    F: FnOnce(&AtomicBool) -> EvalReport + Send + 'static,
{
    let (tx, rx) = mpsc::channel();
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    std::thread::Builder::new()
        .name("candidate-eval".into())
        .spawn(move || {
            let report = thunk(&flag);
            let _ = tx.send(report);
        })
        .expect("spawning an evaluation worker");
    PendingEval {
        rx,
        cancel,
        started: Instant::now(),
        timeout,
    }
}

/// Runs `thunk` with a candidate-level timeout; a timeout is a marker, not an error.
pub fn run_with_timeouts<F>(thunk: F, timeout: Duration) -> TimedEval
where
    F: FnOnce(&AtomicBool) -> EvalReport + Send + 'static,
{
    spawn_eval(thunk, timeout).wait()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_thunk_finishes() {
        let out = run_with_timeouts(
            |_| EvalReport::failed("g", "t", "quick".into(), 1.0),
            Duration::from_secs(5),
        );
        assert!(matches!(out, TimedEval::Finished { seconds, .. } if seconds < 5.0));
    }

    #[test]
    fn slow_thunk_times_out_and_is_cancelled() {
        let seen = Arc::new(AtomicBool::new(false));
        let seen2 = Arc::clone(&seen);
        let start = Instant::now();
        let out = run_with_timeouts(
            move |cancel| {
                while !cancel.load(Ordering::Relaxed) {
                    std::thread::sleep(Duration::from_millis(5));
                }
                seen2.store(true, Ordering::Relaxed);
                EvalReport::failed("g", "t", "cancelled".into(), 1.0)
            },
            Duration::from_millis(200),
        );
        assert!(matches!(out, TimedEval::TimedOut { .. }));
        assert!(start.elapsed() < Duration::from_millis(700));
        std::thread::sleep(Duration::from_millis(100));
        assert!(seen.load(Ordering::Relaxed));
    }

    #[test]
    fn panicking_thunk_is_a_failure() {
        let out = run_with_timeouts(|_| panic!("boom"), Duration::from_secs(5));
        match out {
            TimedEval::Finished { report, .. } => assert!(!report.succeeded()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
