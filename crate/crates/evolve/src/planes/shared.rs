//! State shared between the planes: the snapshot buffer and the staging slot.

use parking_lot::{Mutex, RwLock};
use policylab_core::traces::{Trace, TraceRecord};
use policylab_core::policy::PolicyGenome;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Runtime failures of the planes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaneError {
    #[error("snapshot buffer is empty")]
    EmptyWindow,
    #[error("invalid plane config: {0}")]
    InvalidConfig(String),
}

/// A monitoring record with its position in the live stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringRecord {
    pub step: usize,
    pub record: TraceRecord,
}

#[derive(Debug)]
struct Ring {
    records: VecDeque<MonitoringRecord>,
    pushed: usize,
}

/// Fixed-capacity circular buffer of monitoring records. Writers append; readers copy out a
/// contiguous window under a short read lock.
#[derive(Debug)]
pub struct SnapshotBuffer {
    ring: RwLock<Ring>,
    capacity: usize,
    window_size: usize,
    source: String,
}

impl SnapshotBuffer {
    /// `capacity` must be at least `window_size`, which must be at least 1.
    pub fn new(capacity: usize, window_size: usize, source: impl Into<String>) -> Result<Self, PlaneError> {
        if window_size < 1 {
            return Err(PlaneError::InvalidConfig("window_size must be >= 1".into()));
        }
        if capacity < window_size {
            return Err(PlaneError::InvalidConfig(format!(
                "buffer capacity {capacity} is smaller than window_size {window_size}"
            )));
        }
        Ok(Self {
            ring: RwLock::new(Ring {
                records: VecDeque::with_capacity(capacity),
                pushed: 0,
            }),
            capacity,
            window_size,
            source: source.into(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Appends a record, dropping the oldest when full.
    pub fn push(&self, step: usize, record: TraceRecord) {
        let mut ring = self.ring.write();
        if ring.records.len() == self.capacity {
            ring.records.pop_front();
        }
        ring.records.push_back(MonitoringRecord { step, record });
        ring.pushed += 1;
    }

    /// Records currently held.
    pub fn len(&self) -> usize {
        self.ring.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records ever appended.
    pub fn pushed(&self) -> usize {
        self.ring.read().pushed
    }

    /// The most recent `min(window_size, held)` records as a trace, oldest first. Records are
    /// copied, not removed.
    pub fn extract_window(&self, window_size: usize) -> Result<(Trace, Vec<usize>), PlaneError> {
        let ring = self.ring.read();
        if ring.records.is_empty() {
            return Err(PlaneError::EmptyWindow);
        }
        let n = window_size.min(ring.records.len());
        let window: Vec<&MonitoringRecord> = ring.records.iter().skip(ring.records.len() - n).collect();
        let steps: Vec<usize> = window.iter().map(|m| m.step).collect();
        let records = window.iter().map(|m| m.record.clone()).collect();
        drop(ring);
        let trace = Trace {
            id: format!("{}@{}-{}", self.source, steps[0], steps[steps.len() - 1]),
            note: String::new(),
            records,
        };
        Ok((trace, steps))
    }

    /// [`Self::extract_window`] at the configured window size.
    pub fn window(&self) -> Result<(Trace, Vec<usize>), PlaneError> {
        self.extract_window(self.window_size)
    }
}

/// A genome handed from the control plane to the data plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedPolicy {
    pub genome: PolicyGenome,
    /// Fitness on the snapshot that justified staging it.
    pub fitness: f64,
    pub cycle: usize,
    pub generation: u64,
}

/// Single-writer, single-consumer hand-off of the next policy. Each staged policy is taken at
/// most once; staging again before it is taken replaces it.
#[derive(Debug, Default)]
pub struct StagingSlot {
    staged: Mutex<Option<StagedPolicy>>,
    generation: AtomicU64,
}

impl StagingSlot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stages `genome` under a fresh generation number, which is returned.
    pub fn stage(&self, genome: PolicyGenome, fitness: f64, cycle: usize) -> u64 {
        let mut slot = self.staged.lock();
        let generation = self.generation.fetch_add(1, Ordering::SeqCst) + 1;
        *slot = Some(StagedPolicy {
            genome,
            fitness,
            cycle,
            generation,
        });
        generation
    }

    /// Takes the staged policy if one is waiting.
    pub fn take(&self) -> Option<StagedPolicy> {
        self.staged.lock().take()
    }

    /// Latest generation handed out.
    pub fn generation(&self) -> u64 {
        self.generation.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use policylab_core::policy::seed_by_name;
    use policylab_core::traces::bundled_trace;
    use std::sync::Arc;

    fn record(i: usize) -> TraceRecord {
        let mut r = bundled_trace("volatile-workload").unwrap().records[0].clone();
        r.t = i as f64;
        r
    }

    #[test]
    fn underfull_window_returns_everything() {
        let b = SnapshotBuffer::new(8, 5, "live").unwrap();
        for i in 0..3 {
            b.push(i, record(i));
        }
        let (w, steps) = b.window().unwrap();
        assert_eq!(w.records.len(), 3);
        assert_eq!(steps, vec![0, 1, 2]);
    }

    #[test]
    fn consecutive_windows_overlap() {
        let b = SnapshotBuffer::new(8, 5, "live").unwrap();
        for i in 0..6 {
            b.push(i, record(i));
        }
        let (_, a) = b.window().unwrap();
        b.push(6, record(6));
        let (_, c) = b.window().unwrap();
        let shared = a.iter().filter(|s| c.contains(s)).count();
        assert_eq!(shared, 4);
        assert_eq!(b.len(), 7);
    }

    #[test]
    fn wraparound_keeps_window_contiguous() {
        let b = SnapshotBuffer::new(4, 3, "live").unwrap();
        for i in 0..11 {
            b.push(i, record(i));
        }
        assert_eq!(b.len(), 4);
        assert_eq!(b.pushed(), 11);
        let (w, steps) = b.extract_window(10).unwrap();
        assert_eq!(steps, vec![7, 8, 9, 10]);
        assert!(w.records.windows(2).all(|p| p[0].t < p[1].t));
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let b = SnapshotBuffer::new(4, 3, "live").unwrap();
        assert_eq!(b.window().unwrap_err(), PlaneError::EmptyWindow);
        assert!(SnapshotBuffer::new(2, 3, "live").is_err());
    }

    #[test]
    fn concurrent_reads_see_contiguous_windows() {
        let b = Arc::new(SnapshotBuffer::new(16, 8, "live").unwrap());
        let writer = {
            let b = Arc::clone(&b);
            std::thread::spawn(move || {
                for i in 0..5000 {
                    b.push(i, record(i));
                }
            })
        };
        let mut reads = 0;
        while !writer.is_finished() || reads < 100 {
            if let Ok((w, steps)) = b.window() {
                assert!(steps.windows(2).all(|p| p[1] == p[0] + 1), "torn window {steps:?}");
                assert!(w.records.iter().zip(&steps).all(|(r, s)| r.t == *s as f64));
                reads += 1;
            }
        }
        writer.join().unwrap();
    }

    #[test]
    fn staged_policy_is_taken_once() {
        let slot = StagingSlot::new();
        assert!(slot.take().is_none());
        let g = seed_by_name("greedy-periodic-full").unwrap();
        assert_eq!(slot.stage(g.clone(), 1.0, 0), 1);
        assert_eq!(slot.stage(g.clone(), 0.5, 1), 2);
        let s = slot.take().unwrap();
        assert_eq!(s.generation, 2);
        assert!(slot.take().is_none());
        assert_eq!(slot.generation(), 2);
    }
}
