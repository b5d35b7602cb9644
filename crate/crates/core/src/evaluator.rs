//! Trace-replay fitness: walks monitoring points, applies a policy, and accumulates scheduling,
//! stale-serving, reconfiguration and serving costs into a per-interval report.

use crate::catalog::Catalog;
use crate::plan::{clip_to_cluster, plan_makespan_penalized, Context, Deployment, ServingPlan, WorkloadSnapshot};
use crate::policy::{schedule, should_reschedule, PolicyEnv, PolicyGenome};
use crate::sim::{reconfig_breakdown, SimConfig};
use crate::timing::TimerModel;
use crate::traces::{Trace, TraceRecord};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::atomic::AtomicBool;
use thiserror::Error;

/// Evaluation errors that are the caller's fault rather than the genome's.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("cannot compare reports from different traces: `{0}` vs `{1}`")]
    TraceMismatch(String, String),
    #[error("invalid genome: {0}")]
    InvalidGenome(String),
}

/// Replay knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub sim: SimConfig,
    pub timer: TimerModel,
    /// Cadence of monitoring points when pacing against the wall clock.
    pub monitoring_step_seconds: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            timer: TimerModel::default(),
            monitoring_step_seconds: 5.0,
        }
    }
}

/// Costs of one rescheduling interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalCosts {
    /// 1-based interval index.
    pub index: usize,
    /// Monitoring step that opened the interval.
    pub step: usize,
    pub t_sched: f64,
    pub t_stale: f64,
    pub t_reconfig: f64,
    pub t_serve: f64,
}

/// Aggregated replay outcome; the artifact feedback of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub genome_id: String,
    pub trace_id: String,
    pub n: usize,
    pub intervals: Vec<IntervalCosts>,
    pub sum_sched: f64,
    pub sum_stale: f64,
    pub sum_reconfig: f64,
    pub sum_serve: f64,
    pub t_total: f64,
    /// Why the candidate failed; its fitness is then Λ_∞.
    pub failure: Option<String>,
}

impl EvalReport {
    /// Aggregates intervals: `T_total = t_sched(1) + Σt_stale + Σt_reconfig + Σt_serve`.
    pub fn from_intervals(genome_id: &str, trace_id: &str, intervals: Vec<IntervalCosts>) -> Self {
        let sum = |f: fn(&IntervalCosts) -> f64| intervals.iter().map(f).sum::<f64>();
        let sum_sched = sum(|i| i.t_sched);
        let sum_stale = sum(|i| i.t_stale);
        let sum_reconfig = sum(|i| i.t_reconfig);
        let sum_serve = sum(|i| i.t_serve);
        let first_sched = intervals.first().map(|i| i.t_sched).unwrap_or(0.0);
        Self {
            genome_id: genome_id.to_string(),
            trace_id: trace_id.to_string(),
            n: intervals.len(),
            t_total: first_sched + sum_stale + sum_reconfig + sum_serve,
            intervals,
            sum_sched,
            sum_stale,
            sum_reconfig,
            sum_serve,
            failure: None,
        }
    }

    /// A failed candidate's report.
    pub fn failed(genome_id: &str, trace_id: &str, reason: String, penalty: f64) -> Self {
        let mut r = Self::from_intervals(genome_id, trace_id, Vec::new());
        r.t_total = penalty;
        r.failure = Some(reason);
        r
    }

    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    /// Fitness; lower is better.
    pub fn fitness(&self) -> f64 {
        self.t_total
    }

    /// Sum recomputed from the interval list.
    pub fn recomputed_total(&self) -> f64 {
        let first = self.intervals.first().map(|i| i.t_sched).unwrap_or(0.0);
        first
            + self
                .intervals
                .iter()
                .map(|i| i.t_stale + i.t_reconfig + i.t_serve)
                .sum::<f64>()
    }

    /// Per-interval CSV with a trailing total row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["interval", "step", "t_sched", "t_stale", "t_reconfig", "t_serve"])
            .expect("in-memory write");
        for i in &self.intervals {
            w.write_record([
                i.index.to_string(),
                i.step.to_string(),
                format!("{:.6}", i.t_sched),
                format!("{:.6}", i.t_stale),
                format!("{:.6}", i.t_reconfig),
                format!("{:.6}", i.t_serve),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "total".to_string(),
            self.n.to_string(),
            format!("{:.6}", self.sum_sched),
            format!("{:.6}", self.sum_stale),
            format!("{:.6}", self.sum_reconfig),
            format!("{:.6}", self.sum_serve),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Header of the fixed-width breakdown table.
    pub fn table_header() -> String {
        format!(
            "{:<28} {:>4} {:>12} {:>12} {:>12} {:>12}",
            "candidate", "N", "sum_stale", "sum_reconfig", "sum_serve", "T_total"
        )
    }

    /// One fixed-width breakdown row.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{:<28} {:>4} {:>11.1}s {:>11.1}s {:>11.1}s {:>11.1}s",
            label, self.n, self.sum_stale, self.sum_reconfig, self.sum_serve, self.t_total
        )
    }
}

/// Signed component changes from a parent report to a child report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDelta {
    pub d_n: i64,
    pub d_sched: f64,
    pub d_stale: f64,
    pub d_reconfig: f64,
    pub d_serve: f64,
    pub d_total: f64,
}

impl FeedbackDelta {
    /// The child is worse than its parent.
    pub fn regression(&self) -> bool {
        self.d_total > 0.0
    }

    /// Short text block for mutation prompts.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "dN={:+} dStale={:+.1}s dReconfig={:+.1}s dServe={:+.1}s dT_total={:+.1}s",
            self.d_n, self.d_stale, self.d_reconfig, self.d_serve, self.d_total
        );
        if self.regression() {
            s.push_str(" (regression)");
        }
        s
    }
}

/// Compares a child's cost breakdown against its parent's on the same trace.
pub fn compare_feedback(parent: &EvalReport, child: &EvalReport) -> Result<FeedbackDelta, EvalError> {
    if parent.trace_id != child.trace_id {
        return Err(EvalError::TraceMismatch(parent.trace_id.clone(), child.trace_id.clone()));
    }
    Ok(FeedbackDelta {
        d_n: child.n as i64 - parent.n as i64,
        d_sched: child.sum_sched - parent.sum_sched,
        d_stale: child.sum_stale - parent.sum_stale,
        d_reconfig: child.sum_reconfig - parent.sum_reconfig,
        d_serve: child.sum_serve - parent.sum_serve,
        d_total: child.t_total - parent.t_total,
    })
}

/// A freshly computed plan and the scheduling time it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescheduled {
    pub plan: ServingPlan,
    pub t_sched: f64,
}

/// The cost model behind a replay. Implementations must be pure in their arguments.
pub trait CostEngine {
    fn should_reschedule(&self, ctx: &Context, step: usize, last: usize) -> bool;
    fn schedule(&self, ctx: &Context, step: usize) -> Result<Rescheduled, String>;
    /// Extra costs of the cold-start interval as `(t_load, t_stale, t_reconfig)`; the load
    /// time is folded into `t_sched(1)`.
    fn cold_start(&self, next: &Rescheduled, step: usize) -> (f64, f64, f64);
    fn t_stale(&self, prev: &ServingPlan, next: &Rescheduled, workload: &WorkloadSnapshot, step: usize) -> f64;
    fn t_reconfig(&self, prev: &ServingPlan, next: &ServingPlan, step: usize) -> f64;
    fn t_serve(&self, plan: &ServingPlan, workload: &WorkloadSnapshot, step: usize) -> f64;
    fn penalty(&self) -> f64;
}

/// The simulator-backed engine interpreting a genome.
pub struct SimEngine<'a> {
    pub genome: &'a PolicyGenome,
    pub catalog: &'a Catalog,
    pub config: ReplayConfig,
    pub cancel: Option<&'a AtomicBool>,
}

impl<'a> SimEngine<'a> {
    pub fn new(genome: &'a PolicyGenome, catalog: &'a Catalog, config: ReplayConfig) -> Self {
        Self {
            genome,
            catalog,
            config,
            cancel: None,
        }
    }

    fn env(&self) -> PolicyEnv<'_> {
        PolicyEnv {
            catalog: self.catalog,
            sim: &self.config.sim,
            timer: self.config.timer,
            cancel: self.cancel,
        }
    }

    fn makespan(&self, plan: &ServingPlan, workload: &WorkloadSnapshot) -> f64 {
        plan_makespan_penalized(plan, workload, self.catalog, &self.config.sim).t_balanced
    }
}

impl CostEngine for SimEngine<'_> {
    fn should_reschedule(&self, ctx: &Context, step: usize, last: usize) -> bool {
        should_reschedule(self.genome, ctx, step as u64, last as u64, &self.env())
    }

    fn schedule(&self, ctx: &Context, _step: usize) -> Result<Rescheduled, String> {
        let out = schedule(self.genome, ctx, &self.env()).map_err(|e| e.to_string())?;
        Ok(Rescheduled {
            plan: out.plan,
            t_sched: out.seconds,
        })
    }

    /// Model initialization only; no previous plan means no stale or reconfiguration cost.
    fn cold_start(&self, next: &Rescheduled, _step: usize) -> (f64, f64, f64) {
        (reconfig_breakdown(&ServingPlan::empty(), &next.plan, self.catalog).load, 0.0, 0.0)
    }

    /// `t_sched × min(cap, max(0, Λ_prev/Λ_next − 1))` on the interval's workload.
    fn t_stale(&self, prev: &ServingPlan, next: &Rescheduled, workload: &WorkloadSnapshot, _step: usize) -> f64 {
        let before = self.makespan(prev, workload);
        let after = self.makespan(&next.plan, workload);
        let slowdown = if after > 0.0 {
            (before / after - 1.0).max(0.0)
        } else {
            0.0
        };
        next.t_sched * slowdown.min(self.config.sim.max_stale_slowdown)
    }

    fn t_reconfig(&self, prev: &ServingPlan, next: &ServingPlan, _step: usize) -> f64 {
        reconfig_breakdown(prev, next, self.catalog).total()
    }

    fn t_serve(&self, plan: &ServingPlan, workload: &WorkloadSnapshot, _step: usize) -> f64 {
        self.makespan(plan, workload)
    }

    fn penalty(&self) -> f64 {
        self.config.sim.infeasible_penalty_seconds
    }
}

/// Scripted costs for exercising the aggregation independently of the simulator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StubEngine {
    /// Steps (after the first) at which the trigger fires.
    pub triggers: Vec<usize>,
    /// Per interval: (t_sched, t_stale, t_reconfig).
    pub interval_costs: Vec<(f64, f64, f64)>,
    /// Serving time charged per monitoring step.
    pub serve_per_step: Vec<f64>,
}

impl StubEngine {
    /// A stub whose intervals open at `triggers` and whose component sums equal the given totals.
    /// Costs are spread evenly over the intervals after the first; a single-interval stub
    /// charges them to the cold-start interval.
    pub fn from_totals(steps: usize, triggers: Vec<usize>, stale: f64, reconfig: f64, serve: f64) -> Self {
        let n = triggers.len() + 1;
        let later = (n - 1).max(1) as f64;
        let mut interval_costs = vec![(0.0, 0.0, 0.0)];
        for _ in 1..n {
            interval_costs.push((0.0, stale / later, reconfig / later));
        }
        if n == 1 {
            interval_costs[0] = (0.0, stale, reconfig);
        }
        Self {
            triggers,
            interval_costs,
            serve_per_step: vec![serve / steps as f64; steps],
        }
    }

    fn interval_of(&self, step: usize) -> usize {
        self.triggers.iter().filter(|&&s| s <= step && s > 0).count()
    }
}

impl CostEngine for StubEngine {
    fn should_reschedule(&self, _ctx: &Context, step: usize, _last: usize) -> bool {
        self.triggers.contains(&step)
    }

    fn schedule(&self, _ctx: &Context, step: usize) -> Result<Rescheduled, String> {
        let i = self.interval_of(step);
        Ok(Rescheduled {
            plan: ServingPlan::empty(),
            t_sched: self.interval_costs.get(i).map(|c| c.0).unwrap_or(0.0),
        })
    }

    fn cold_start(&self, _next: &Rescheduled, _step: usize) -> (f64, f64, f64) {
        let (_, stale, reconfig) = self.interval_costs.first().copied().unwrap_or_default();
        (0.0, stale, reconfig)
    }

    fn t_stale(&self, _prev: &ServingPlan, _next: &Rescheduled, _w: &WorkloadSnapshot, step: usize) -> f64 {
        self.interval_costs.get(self.interval_of(step)).map(|c| c.1).unwrap_or(0.0)
    }

    fn t_reconfig(&self, _prev: &ServingPlan, _next: &ServingPlan, step: usize) -> f64 {
        self.interval_costs.get(self.interval_of(step)).map(|c| c.2).unwrap_or(0.0)
    }

    fn t_serve(&self, _plan: &ServingPlan, _w: &WorkloadSnapshot, step: usize) -> f64 {
        self.serve_per_step.get(step).copied().unwrap_or(0.0)
    }

    fn penalty(&self) -> f64 {
        SimConfig::default().infeasible_penalty_seconds
    }
}

/// What happened at one monitoring step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    pub rescheduled: bool,
    pub interval: usize,
    pub t_serve: f64,
    pub plan: ServingPlan,
    /// A schedule failure that was absorbed by keeping the previous plan.
    pub error: Option<String>,
}

/// Incremental replay state, shared by the evaluator and the live data plane.
#[derive(Debug, Clone, Default)]
pub struct ReplayState {
    deployed: Option<Deployment>,
    last: usize,
    intervals: Vec<IntervalCosts>,
    failure: Option<String>,
}

impl ReplayState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deployed(&self) -> Option<&Deployment> {
        self.deployed.as_ref()
    }

    pub fn intervals(&self) -> &[IntervalCosts] {
        &self.intervals
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    /// Processes one monitoring point. With `tolerate_errors`, a failed reschedule keeps the
    /// previous plan; otherwise the replay is marked failed and stops charging.
    pub fn step(
        &mut self,
        engine: &dyn CostEngine,
        step: usize,
        record: &TraceRecord,
        tolerate_errors: bool,
    ) -> StepLog {
        let ctx = Context {
            workload: record.workloads.clone(),
            cluster: record.cluster.clone(),
            deployed: self.deployed.clone(),
        };
        let mut log = StepLog {
            step,
            t: record.t,
            rescheduled: false,
            interval: self.intervals.len(),
            t_serve: 0.0,
            plan: ServingPlan::empty(),
            error: None,
        };
        if self.failure.is_some() {
            return log;
        }
        let fire = self.deployed.is_none() || engine.should_reschedule(&ctx, step, self.last);
        if fire {
            match engine.schedule(&ctx, step) {
                Ok(next) => {
                    let costs = match &self.deployed {
                        None => {
                            let (load, stale, reconfig) = engine.cold_start(&next, step);
                            IntervalCosts {
                                index: 1,
                                step,
                                t_sched: next.t_sched + load,
                                t_stale: stale,
                                t_reconfig: reconfig,
                                t_serve: 0.0,
                            }
                        }
                        Some(d) => {
                            let prev = clip_to_cluster(&d.plan, &ctx.cluster);
                            IntervalCosts {
                                index: self.intervals.len() + 1,
                                step,
                                t_sched: next.t_sched,
                                t_stale: engine.t_stale(&prev, &next, &ctx.workload, step),
                                t_reconfig: engine.t_reconfig(&d.plan, &next.plan, step),
                                t_serve: 0.0,
                            }
                        }
                    };
                    self.intervals.push(costs);
                    self.deployed = Some(Deployment {
                        plan: next.plan,
                        workload: ctx.workload.clone(),
                        cluster: ctx.cluster.clone(),
                    });
                    self.last = step;
                    log.rescheduled = true;
                }
                Err(e) if tolerate_errors && self.deployed.is_some() => log.error = Some(e),
                Err(e) => {
                    self.failure = Some(format!("step {step}: {e}"));
                    log.error = self.failure.clone();
                    return log;
                }
            }
        }
        let deployed = self.deployed.as_ref().expect("deployed after first step");
        let serving = clip_to_cluster(&deployed.plan, &ctx.cluster);
        let t_serve = engine.t_serve(&serving, &ctx.workload, step);
        if let Some(current) = self.intervals.last_mut() {
            current.t_serve += t_serve;
        }
        log.interval = self.intervals.len();
        log.t_serve = t_serve;
        log.plan = serving;
        log
    }

    /// Final report; failed replays carry Λ_∞.
    pub fn finish(self, genome_id: &str, trace_id: &str, penalty: f64) -> EvalReport {
        match self.failure {
            Some(reason) => EvalReport::failed(genome_id, trace_id, reason, penalty),
            None => EvalReport::from_intervals(genome_id, trace_id, self.intervals),
        }
    }
}

/// Replays a trace under any cost engine.
pub fn replay_with(engine: &dyn CostEngine, genome_id: &str, trace: &Trace) -> Result<EvalReport, EvalError> {
    if trace.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let mut state = ReplayState::new();
    for (step, record) in trace.records.iter().enumerate() {
        state.step(engine, step, record, false);
        if state.failure().is_some() {
            break;
        }
    }
    Ok(state.finish(genome_id, &trace.id, engine.penalty()))
}

/// Replays a trace under a genome with the analytical simulator.
pub fn replay(
    genome: &PolicyGenome,
    trace: &Trace,
    catalog: &Catalog,
    config: &ReplayConfig,
) -> Result<EvalReport, EvalError> {
    replay_cancellable(genome, trace, catalog, config, None)
}

/// [`replay`] with a cooperative cancellation flag checked inside scheduler searches.
pub fn replay_cancellable(
    genome: &PolicyGenome,
    trace: &Trace,
    catalog: &Catalog,
    config: &ReplayConfig,
    cancel: Option<&AtomicBool>,
) -> Result<EvalReport, EvalError> {
    genome.validate().map_err(|e| EvalError::InvalidGenome(e.to_string()))?;
    let engine = SimEngine {
        genome,
        catalog,
        config: *config,
        cancel,
    };
    replay_with(&engine, &genome.id, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::seed_by_name;
    use crate::traces::bundled_trace;

    fn dummy_trace(steps: usize) -> Trace {
        Trace {
            id: "stub".into(),
            note: String::new(),
            records: (0..steps)
                .map(|i| TraceRecord {
                    t: i as f64,
                    phase: None,
                    workloads: WorkloadSnapshot::new(),
                    cluster: Default::default(),
                })
                .collect(),
        }
    }

    fn table_row(n: usize, stale: f64, reconfig: f64, serve: f64) -> EvalReport {
        let triggers: Vec<usize> = (1..n).collect();
        let engine = StubEngine::from_totals(10, triggers, stale, reconfig, serve);
        replay_with(&engine, "g", &dummy_trace(10)).unwrap()
    }

    #[test]
    fn stub_aggregation_reproduces_breakdown_rows() {
        let parent = table_row(2, 7.6, 12.0, 25.2);
        let a = table_row(5, 5.5, 4.0, 24.0);
        let b = table_row(1, 10.0, 17.0, 23.0);
        assert_eq!((parent.n, a.n, b.n), (2, 5, 1));
        assert!((parent.t_total - 44.8).abs() < 1e-9);
        assert!((a.t_total - 33.5).abs() < 1e-9);
        assert!((b.t_total - 50.0).abs() < 1e-9);
    }

    #[test]
    fn feedback_deltas() {
        let parent = table_row(2, 7.6, 12.0, 25.2);
        let a = table_row(5, 5.5, 4.0, 24.0);
        let b = table_row(1, 10.0, 17.0, 23.0);
        let d = compare_feedback(&parent, &a).unwrap();
        assert_eq!(d.d_n, 3);
        assert!((d.d_stale + 2.1).abs() < 1e-9);
        assert!((d.d_reconfig + 8.0).abs() < 1e-9);
        assert!((d.d_total + 11.3).abs() < 1e-9);
        assert!(!d.regression());
        let d = compare_feedback(&parent, &b).unwrap();
        assert!((d.d_total - 5.2).abs() < 1e-9);
        assert!(d.regression());
        assert!(d.render().contains("regression"));
        let z = compare_feedback(&parent, &parent).unwrap();
        assert_eq!(z.d_n, 0);
        assert_eq!(z.d_total, 0.0);
        let mut other = a.clone();
        other.trace_id = "elsewhere".into();
        assert!(compare_feedback(&parent, &other).is_err());
    }

    #[test]
    fn never_trigger_has_one_interval() {
        let catalog = Catalog::bundled();
        let trace = bundled_trace("stable-workload").unwrap();
        let g = seed_by_name("exact-never-full").unwrap();
        let r = replay(&g, &trace, &catalog, &ReplayConfig::default()).unwrap();
        assert!(r.succeeded(), "{:?}", r.failure);
        assert_eq!(r.n, 1);
        assert_eq!(r.sum_stale, 0.0);
        assert_eq!(r.sum_reconfig, 0.0);
        assert!((r.recomputed_total() - r.t_total).abs() <= 1e-12 * r.t_total);
    }

    #[test]
    fn periodic_greedy_reschedules_every_step() {
        let catalog = Catalog::bundled();
        let trace = bundled_trace("volatile-workload").unwrap();
        let g = seed_by_name("greedy-periodic-full").unwrap();
        let r = replay(&g, &trace, &catalog, &ReplayConfig::default()).unwrap();
        assert!(r.succeeded(), "{:?}", r.failure);
        assert_eq!(r.n, trace.len());
    }

    #[test]
    fn replays_are_deterministic_under_work_timer() {
        let catalog = Catalog::bundled();
        let trace = bundled_trace("motivation-shifting").unwrap();
        for g in crate::policy::seed_genomes() {
            let a = replay(&g, &trace, &catalog, &ReplayConfig::default()).unwrap();
            let b = replay(&g, &trace, &catalog, &ReplayConfig::default()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_csv(), b.to_csv());
        }
    }

    #[test]
    fn csv_has_interval_rows_and_total() {
        let r = table_row(2, 7.6, 12.0, 25.2);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("interval,step,t_sched,t_stale,t_reconfig,t_serve"));
        assert!(EvalReport::table_header().contains("T_total"));
        assert!(r.table_row("parent").contains("44.8s"));
    }

    #[test]
    fn failing_schedule_marks_candidate_failed() {
        struct Failing;
        impl CostEngine for Failing {
            fn should_reschedule(&self, _: &Context, _: usize, _: usize) -> bool {
                true
            }
            fn schedule(&self, _: &Context, _: usize) -> Result<Rescheduled, String> {
                Err("boom".into())
            }
            fn cold_start(&self, _: &Rescheduled, _: usize) -> (f64, f64, f64) {
                (0.0, 0.0, 0.0)
            }
            fn t_stale(&self, _: &ServingPlan, _: &Rescheduled, _: &WorkloadSnapshot, _: usize) -> f64 {
                0.0
            }
            fn t_reconfig(&self, _: &ServingPlan, _: &ServingPlan, _: usize) -> f64 {
                0.0
            }
            fn t_serve(&self, _: &ServingPlan, _: &WorkloadSnapshot, _: usize) -> f64 {
                0.0
            }
            fn penalty(&self) -> f64 {
                1e9
            }
        }
        let r = replay_with(&Failing, "g", &dummy_trace(3)).unwrap();
        assert!(!r.succeeded());
        assert_eq!(r.fitness(), 1e9);
    }
}
