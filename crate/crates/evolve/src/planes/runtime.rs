//! The data plane, the control plane and the orchestrator running them together.

use super::shared::{PlaneError, SnapshotBuffer, StagingSlot};
use crate::engine::{EvolveConfig, Evolver};
use crate::eval::TraceEvaluator;
use crate::llm::LlmMutator;
use policylab_core::catalog::Catalog;
use policylab_core::evaluator::{replay, EvalReport, ReplayConfig, ReplayState, SimEngine};
use policylab_core::policy::{seed_genomes, PolicyGenome};
use policylab_core::traces::{Trace, TraceRecord};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Default relative improvement required before a policy is staged.
pub const DEFAULT_IMPROVEMENT_MARGIN: f64 = 0.02;

/// One monitoring step as served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingStep {
    pub step: usize,
    pub t: f64,
    /// Generation of the genome that made this step's decisions (0 = initial genome).
    pub generation: u64,
    pub genome_id: String,
    pub rescheduled: bool,
    pub interval: usize,
    pub t_serve: f64,
    pub error: Option<String>,
}

/// A hot swap observed by the data plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapEvent {
    pub step: usize,
    pub generation: u64,
    pub genome_id: String,
    pub cycle: usize,
}

/// Everything the data plane records.
#[derive(Debug, Clone, PartialEq)]
pub struct ServingLog {
    pub steps: Vec<ServingStep>,
    pub swaps: Vec<SwapEvent>,
    /// Cost breakdown of the whole live run.
    pub report: EvalReport,
}

impl ServingLog {
    /// Writes steps as JSON lines.
    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        write_jsonl(path, &self.steps)
    }
}

/// Writes any serializable rows as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

/// Replays live records under the deployed genome, swapping in staged genomes between steps.
pub struct DataPlane<'a> {
    catalog: &'a Catalog,
    replay: ReplayConfig,
    state: ReplayState,
    genome: PolicyGenome,
    generation: u64,
    source: String,
    steps: Vec<ServingStep>,
    swaps: Vec<SwapEvent>,
}

impl<'a> DataPlane<'a> {
    pub fn new(initial: PolicyGenome, catalog: &'a Catalog, replay: ReplayConfig, source: impl Into<String>) -> Self {
        Self {
            catalog,
            replay,
            state: ReplayState::new(),
            genome: initial,
            generation: 0,
            source: source.into(),
            steps: Vec::new(),
            swaps: Vec::new(),
        }
    }

    pub fn genome(&self) -> &PolicyGenome {
        &self.genome
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// One monitoring step: swap if a newer genome is staged, record into the buffer, then
    /// run the trigger and scheduler exactly as the evaluator does. Schedule failures keep the
    /// previous plan.
    pub fn step(&mut self, step: usize, record: &TraceRecord, buffer: &SnapshotBuffer, slot: &StagingSlot) -> &ServingStep {
        if let Some(staged) = slot.take() {
            if staged.generation > self.generation {
                self.generation = staged.generation;
                self.genome = staged.genome;
                self.swaps.push(SwapEvent {
                    step,
                    generation: self.generation,
                    genome_id: self.genome.id.clone(),
                    cycle: staged.cycle,
                });
            }
        }
        buffer.push(step, record.clone());
        let engine = SimEngine::new(&self.genome, self.catalog, self.replay);
        let log = self.state.step(&engine, step, record, true);
        if let Some(e) = &log.error {
            tracing::warn!(step, error = %e, "schedule failed; keeping the previous plan");
        }
        self.steps.push(ServingStep {
            step,
            t: record.t,
            generation: self.generation,
            genome_id: self.genome.id.clone(),
            rescheduled: log.rescheduled,
            interval: log.interval,
            t_serve: log.t_serve,
            error: log.error,
        });
        self.steps.last().expect("just pushed")
    }

    /// Closes the run.
    pub fn finish(self) -> ServingLog {
        let report = self
            .state
            .finish(&self.genome.id, &self.source, self.replay.sim.infeasible_penalty_seconds);
        ServingLog {
            steps: self.steps,
            swaps: self.swaps,
            report,
        }
    }
}

/// Replays `trace` on the data plane alone, consuming whatever appears in `slot`.
pub fn data_plane_run(
    trace: &Trace,
    initial: PolicyGenome,
    catalog: &Catalog,
    replay: ReplayConfig,
    buffer: &SnapshotBuffer,
    slot: &StagingSlot,
) -> ServingLog {
    let mut plane = DataPlane::new(initial, catalog, replay, &trace.id);
    for (step, record) in trace.records.iter().enumerate() {
        plane.step(step, record, buffer, slot);
    }
    plane.finish()
}

/// Control plane knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub evolve: EvolveConfig,
    /// Records per snapshot.
    pub window_size: usize,
    /// A cycle waits until the buffer holds this many records.
    pub min_window: usize,
    /// Relative improvement `ρ` a candidate needs over the deployed genome.
    pub improvement_margin: f64,
    /// Minimum wall-clock gap between snapshot requests in threaded mode.
    pub min_snapshot_interval_seconds: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            evolve: EvolveConfig::default(),
            window_size: 5,
            min_window: 5,
            improvement_margin: DEFAULT_IMPROVEMENT_MARGIN,
            min_snapshot_interval_seconds: 0.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), PlaneError> {
        self.evolve.validate().map_err(PlaneError::InvalidConfig)?;
        if self.window_size < 1 || self.min_window < 1 || self.min_window > self.window_size {
            return Err(PlaneError::InvalidConfig("need 1 <= min_window <= window_size".into()));
        }
        if !(0.0..1.0).contains(&self.improvement_margin) {
            return Err(PlaneError::InvalidConfig("improvement_margin must be in [0, 1)".into()));
        }
        if !(self.min_snapshot_interval_seconds >= 0.0 && self.min_snapshot_interval_seconds.is_finite()) {
            return Err(PlaneError::InvalidConfig("min_snapshot_interval_seconds must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one control-plane cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleEvent {
    pub cycle: usize,
    pub window: String,
    pub window_first_step: usize,
    pub window_last_step: usize,
    pub deployed_genome: String,
    /// Deployed genome re-evaluated on this window; `None` if it failed there.
    pub deployed_fitness: Option<f64>,
    pub best_genome: Option<String>,
    pub best_fitness: Option<f64>,
    pub iterations: usize,
    pub staged: bool,
    pub generation: Option<u64>,
    pub error: Option<String>,
    pub notices: Vec<String>,
}

/// Stage iff `candidate < deployed · (1 − ρ)`.
pub fn should_stage(candidate: f64, deployed: f64, margin: f64) -> bool {
    candidate.is_finite() && candidate < deployed * (1.0 - margin)
}

/// Runs evolution cycles on snapshots and stages improvements.
pub struct ControlPlane<'a> {
    config: ControlConfig,
    catalog: &'a Catalog,
    replay: ReplayConfig,
    llm: Option<Arc<LlmMutator>>,
    deployed: PolicyGenome,
    warm: Vec<PolicyGenome>,
    history: Vec<CycleEvent>,
    stop: Arc<AtomicBool>,
}

impl<'a> ControlPlane<'a> {
    pub fn new(config: ControlConfig, catalog: &'a Catalog, replay: ReplayConfig, deployed: PolicyGenome) -> Self {
        Self {
            config,
            catalog,
            replay,
            llm: None,
            deployed,
            warm: Vec::new(),
            history: Vec::new(),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Shares a flag that cuts a running cycle short at its next iteration boundary.
    pub fn with_stop(mut self, stop: Arc<AtomicBool>) -> Self {
        self.stop = stop;
        self
    }

    pub fn with_llm(mut self, llm: Option<Arc<LlmMutator>>) -> Self {
        self.llm = llm;
        self
    }

    pub fn history(&self) -> &[CycleEvent] {
        &self.history
    }

    pub fn into_history(self) -> Vec<CycleEvent> {
        self.history
    }

    /// Whether the buffer holds enough records for a cycle.
    pub fn ready(&self, buffer: &SnapshotBuffer) -> bool {
        buffer.len() >= self.config.min_window
    }

    /// One cycle: snapshot, warm-started evolution, re-evaluation of the deployed genome, and
    /// staging when the margin is met.
    pub fn cycle(&mut self, buffer: &SnapshotBuffer, slot: &StagingSlot) -> Result<&CycleEvent, PlaneError> {
        let (window, steps) = buffer.extract_window(self.config.window_size)?;
        let cycle = self.history.len();
        let deployed_fitness = replay(&self.deployed, &window, self.catalog, &self.replay)
            .ok()
            .filter(|r| r.succeeded())
            .map(|r| r.t_total);
        let mut event = CycleEvent {
            cycle,
            window: window.id.clone(),
            window_first_step: steps[0],
            window_last_step: steps[steps.len() - 1],
            deployed_genome: self.deployed.id.clone(),
            deployed_fitness,
            best_genome: None,
            best_fitness: None,
            iterations: 0,
            staged: false,
            generation: None,
            error: None,
            notices: Vec::new(),
        };
        let mut seeded = if cycle == 0 { seed_genomes() } else { self.warm.clone() };
        if !seeded.iter().any(|g| g.id == self.deployed.id) {
            seeded.insert(0, self.deployed.clone());
        }
        let evaluator = Arc::new(TraceEvaluator::new(window.clone(), self.catalog.clone(), self.replay));
        let mut evolver = Evolver::new(self.config.evolve.clone(), evaluator).with_stop(Arc::clone(&self.stop));
        if let Some(llm) = &self.llm {
            evolver = evolver.with_llm(Arc::clone(llm));
        }
        match evolver.run(&seeded) {
            Ok(result) => {
                event.best_genome = Some(result.best.genome.id.clone());
                event.best_fitness = Some(result.best.fitness);
                event.iterations = result.iterations();
                event.notices = result.notices.clone();
                self.warm = result.top(self.config.evolve.warm_top_k);
                let deployed = deployed_fitness.unwrap_or(f64::INFINITY);
                if result.best.genome.id != self.deployed.id
                    && should_stage(result.best.fitness, deployed, self.config.improvement_margin)
                {
                    let generation = slot.stage(result.best.genome.clone(), result.best.fitness, cycle);
                    event.staged = true;
                    event.generation = Some(generation);
                    self.deployed = result.best.genome.clone();
                }
            }
            Err(e) => {
                tracing::warn!(cycle, error = %e, "evolution cycle failed; nothing staged");
                event.error = Some(e.to_string());
            }
        }
        self.history.push(event);
        Ok(self.history.last().expect("just pushed"))
    }
}

/// Runs `cycles` control-plane cycles against a buffer nobody else writes.
pub fn control_plane_run(
    buffer: &SnapshotBuffer,
    slot: &StagingSlot,
    config: ControlConfig,
    catalog: &Catalog,
    replay: ReplayConfig,
    deployed: PolicyGenome,
    cycles: usize,
) -> Result<Vec<CycleEvent>, PlaneError> {
    config.validate()?;
    let mut plane = ControlPlane::new(config, catalog, replay, deployed);
    for _ in 0..cycles {
        plane.cycle(buffer, slot)?;
    }
    Ok(plane.into_history())
}

/// How the two planes share time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMode {
    /// Deterministic interleaving: a control cycle runs after every `cycle_every` data steps.
    Lockstep { cycle_every: usize },
    /// Two threads; the data plane sleeps `step_pacing_ms` per step.
    Threaded { step_pacing_ms: u64 },
}

impl Default for RunMode {
    fn default() -> Self {
        RunMode::Lockstep { cycle_every: 1 }
    }
}

/// Orchestrator knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoPlaneConfig {
    pub control: ControlConfig,
    pub buffer_capacity: usize,
    pub mode: RunMode,
    pub replay: ReplayConfig,
}

impl Default for TwoPlaneConfig {
    fn default() -> Self {
        Self {
            control: ControlConfig::default(),
            buffer_capacity: 64,
            mode: RunMode::default(),
            replay: ReplayConfig::default(),
        }
    }
}

/// What a two-plane run produces.
#[derive(Debug, Clone)]
pub struct TwoPlaneOutcome {
    pub serving: ServingLog,
    pub history: Vec<CycleEvent>,
    pub final_genome: PolicyGenome,
    pub interrupted: bool,
}

impl TwoPlaneOutcome {
    /// Cycles that staged a genome.
    pub fn staging_events(&self) -> usize {
        self.history.iter().filter(|e| e.staged).count()
    }
}

/// Serves `trace` on the data plane while the control plane evolves on its snapshots.
pub fn run_two_planes(
    trace: &Trace,
    initial: PolicyGenome,
    catalog: &Catalog,
    config: &TwoPlaneConfig,
    llm: Option<Arc<LlmMutator>>,
    stop: Arc<AtomicBool>,
) -> Result<TwoPlaneOutcome, PlaneError> {
    config.control.validate()?;
    if trace.records.is_empty() {
        return Err(PlaneError::EmptyWindow);
    }
    let buffer = SnapshotBuffer::new(config.buffer_capacity, config.control.window_size, &trace.id)?;
    let slot = StagingSlot::new();
    match config.mode {
        RunMode::Lockstep { cycle_every } => {
            let every = cycle_every.max(1);
            let mut data = DataPlane::new(initial.clone(), catalog, config.replay, &trace.id);
            let mut control = ControlPlane::new(config.control.clone(), catalog, config.replay, initial)
                .with_llm(llm)
                .with_stop(Arc::clone(&stop));
            let mut interrupted = false;
            for (step, record) in trace.records.iter().enumerate() {
                if stop.load(Ordering::Relaxed) {
                    interrupted = true;
                    break;
                }
                data.step(step, record, &buffer, &slot);
                if (step + 1) % every == 0 && control.ready(&buffer) && step + 1 < trace.records.len() {
                    control.cycle(&buffer, &slot)?;
                }
            }
            let final_genome = data.genome().clone();
            Ok(TwoPlaneOutcome {
                serving: data.finish(),
                history: control.into_history(),
                final_genome,
                interrupted,
            })
        }
        RunMode::Threaded { step_pacing_ms } => {
            let done = Arc::new(AtomicBool::new(false));
            let pacing = Duration::from_millis(step_pacing_ms);
            let min_gap = Duration::from_secs_f64(config.control.min_snapshot_interval_seconds);
            std::thread::scope(|scope| {
                let control_handle = scope.spawn(|| {
                    let mut control = ControlPlane::new(config.control.clone(), catalog, config.replay, initial.clone())
                        .with_llm(llm)
                        .with_stop(Arc::clone(&done));
                    let mut last_seen = 0;
                    let mut last_start: Option<Instant> = None;
                    while !done.load(Ordering::Acquire) && !stop.load(Ordering::Relaxed) {
                        let fresh = buffer.pushed() > last_seen;
                        let gap_ok = last_start.is_none_or(|s| s.elapsed() >= min_gap);
                        if fresh && gap_ok && control.ready(&buffer) {
                            last_seen = buffer.pushed();
                            last_start = Some(Instant::now());
                            let _ = control.cycle(&buffer, &slot);
                        } else {
                            std::thread::sleep(Duration::from_millis(1));
                        }
                    }
                    control.into_history()
                });
                let mut data = DataPlane::new(initial.clone(), catalog, config.replay, &trace.id);
                let mut interrupted = false;
                for (step, record) in trace.records.iter().enumerate() {
                    if stop.load(Ordering::Relaxed) {
                        interrupted = true;
                        break;
                    }
                    let started = Instant::now();
                    data.step(step, record, &buffer, &slot);
                    if let Some(rest) = pacing.checked_sub(started.elapsed()) {
                        std::thread::sleep(rest);
                    }
                }
                done.store(true, Ordering::Release);
                if interrupted {
                    tracing::info!("interrupted; waiting for the control plane to wind down");
                }
                let history = control_handle.join().expect("control plane panicked");
                let final_genome = data.genome().clone();
                Ok(TwoPlaneOutcome {
                    serving: data.finish(),
                    history,
                    final_genome,
                    interrupted,
                })
            })
        }
    }
}

/// One status line: deployed genome, generation and the last staging.
pub fn status_line(steps: &[ServingStep], history: &[CycleEvent]) -> String {
    let deployed = steps.last().map(|s| (s.genome_id.as_str(), s.generation));
    let last_staged = history.iter().rev().find(|e| e.staged);
    let staged = match last_staged {
        Some(e) => format!(
            "last staging: cycle {} (window steps {}-{}, generation {})",
            e.cycle,
            e.window_first_step,
            e.window_last_step,
            e.generation.unwrap_or(0)
        ),
        None => "last staging: never".to_string(),
    };
    match deployed {
        Some((id, generation)) => format!(
            "deployed {} generation {} after {} steps; {} cycles; {}",
            &id[..id.len().min(12)],
            generation,
            steps.len(),
            history.len(),
            staged
        ),
        None => format!("no steps served; {} cycles; {}", history.len(), staged),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use policylab_core::policy::seed_by_name;
    use policylab_core::traces::bundled_trace;

    fn setup() -> (Trace, Catalog, ReplayConfig) {
        (bundled_trace("volatile-workload").unwrap(), Catalog::bundled(), ReplayConfig::default())
    }

    #[test]
    fn data_plane_alone_matches_replay() {
        let (trace, catalog, rc) = setup();
        for name in ["greedy-periodic-full", "exact-never-full", "localsearch-delta-minimal"] {
            let g = seed_by_name(name).unwrap();
            let buffer = SnapshotBuffer::new(16, 5, "live").unwrap();
            let log = data_plane_run(&trace, g.clone(), &catalog, rc, &buffer, &StagingSlot::new());
            let expected = replay(&g, &trace, &catalog, &rc).unwrap();
            assert_eq!(log.report.intervals, expected.intervals, "{name}");
            assert_eq!(log.report.t_total, expected.t_total);
            assert!(log.steps.iter().all(|s| s.generation == 0));
            assert_eq!(buffer.pushed(), trace.records.len());
        }
    }

    #[test]
    fn swap_takes_effect_on_the_next_step() {
        let (trace, catalog, rc) = setup();
        let old = seed_by_name("exact-never-full").unwrap();
        let new = seed_by_name("greedy-periodic-full").unwrap();
        let buffer = SnapshotBuffer::new(16, 5, "live").unwrap();
        let slot = StagingSlot::new();
        let mut plane = DataPlane::new(old.clone(), &catalog, rc, "live");
        let k = 3;
        for (step, record) in trace.records.iter().enumerate() {
            plane.step(step, record, &buffer, &slot);
            if step == k {
                slot.stage(new.clone(), 1.0, 0);
            }
        }
        let log = plane.finish();
        for s in &log.steps {
            let want = if s.step <= k { &old.id } else { &new.id };
            assert_eq!(&s.genome_id, want, "step {}", s.step);
        }
        assert_eq!(log.swaps.len(), 1);
        assert_eq!(log.swaps[0].step, k + 1);
    }

    #[test]
    fn identical_swap_changes_only_generation() {
        let (trace, catalog, rc) = setup();
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let baseline = data_plane_run(&trace, g.clone(), &catalog, rc, &SnapshotBuffer::new(16, 5, "a").unwrap(), &StagingSlot::new());
        let slot = StagingSlot::new();
        slot.stage(g.clone(), 1.0, 0);
        let swapped = data_plane_run(&trace, g, &catalog, rc, &SnapshotBuffer::new(16, 5, "a").unwrap(), &slot);
        assert_eq!(baseline.report, swapped.report);
        assert!(swapped.steps.iter().all(|s| s.generation == 1));
    }

    #[test]
    fn margin_boundary() {
        assert!(should_stage(0.99, 1.0, 0.0));
        assert!(!should_stage(1.0, 1.0, 0.0));
        assert!(!should_stage(0.99, 1.0, 0.02));
        assert!(should_stage(0.97, 1.0, 0.02));
        assert!(should_stage(5.0, f64::INFINITY, 0.02));
        assert!(!should_stage(f64::INFINITY, f64::INFINITY, 0.0));
    }

    #[test]
    fn data_plane_keeps_cadence_with_stalled_control() {
        let (trace, catalog, _) = setup();
        let mut cfg = TwoPlaneConfig {
            mode: RunMode::Threaded { step_pacing_ms: 2 },
            ..TwoPlaneConfig::default()
        };
        cfg.control.min_window = 1;
        cfg.control.evolve.candidate_timeout_seconds = 30.0;
        cfg.control.evolve.parallel_eval_degree = 1;
        let start = Instant::now();
        let out = run_two_planes(
            &trace,
            seed_by_name("greedy-periodic-full").unwrap(),
            &catalog,
            &cfg,
            None,
            Arc::new(AtomicBool::new(false)),
        )
        .unwrap();
        assert_eq!(out.serving.steps.len(), trace.records.len());
        assert!(!out.interrupted);
        assert!(start.elapsed() < Duration::from_secs(120));
    }

    #[test]
    fn status_line_reports_generation() {
        let steps = vec![ServingStep {
            step: 0,
            t: 0.0,
            generation: 2,
            genome_id: "abcdef0123456789".into(),
            rescheduled: true,
            interval: 1,
            t_serve: 1.0,
            error: None,
        }];
        let line = status_line(&steps, &[]);
        assert!(line.contains("abcdef012345 generation 2"));
        assert!(line.contains("never"));
    }
}
