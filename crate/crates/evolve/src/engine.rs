//! The evolution cycle: islands feeding a MAP-Elites archive, feedback-biased mutation,
//! bounded parallel evaluation and the candidate and cycle timeouts.

use crate::archive::{Archive, Candidate, CandidateStatus};
use crate::descriptor::{Cell, GridShape};
use crate::eval::{spawn_eval, Evaluate, TimedEval, TraceEvaluator};
use crate::llm::{assemble_prompt, ChildFeedback, LlmError, LlmMutator, LlmStats, PopulationContext, DEFAULT_PROMPT_MAX_TOKENS};
use crate::mutate::mutate_rule_based;
use policylab_core::catalog::Catalog;
use policylab_core::evaluator::{compare_feedback, EvalReport, FeedbackDelta, ReplayConfig};
use policylab_core::policy::{seed_genomes, PolicyGenome};
use policylab_core::traces::Trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

/// How children are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MutatorKind {
    RuleBased,
    Llm,
    /// LLM with probability `p_llm`, rule-based otherwise.
    Mixed { p_llm: f64 },
}

/// Evolution knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub max_iterations: usize,
    pub population_size: usize,
    pub num_islands: usize,
    /// Probability of drawing the parent from the elite fraction of an island's archive.
    pub elite_selection_ratio: f64,
    /// Iterations between ring migrations; `None` never migrates.
    pub migration_interval: Option<usize>,
    pub grid: GridShape,
    pub candidate_timeout_seconds: f64,
    pub evolution_timeout_seconds: f64,
    pub parallel_eval_degree: usize,
    pub seed: u64,
    pub mutator: MutatorKind,
    /// Iterations without an archive change before the cycle is declared converged.
    pub stall_window: usize,
    /// Candidates handed to the next cycle as its warm start.
    pub warm_top_k: usize,
    pub prompt_max_tokens: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            population_size: 50,
            num_islands: 3,
            elite_selection_ratio: 0.2,
            migration_interval: Some(10),
            grid: GridShape::default(),
            candidate_timeout_seconds: 60.0,
            evolution_timeout_seconds: 600.0,
            parallel_eval_degree: 4,
            seed: 42,
            mutator: MutatorKind::RuleBased,
            stall_window: 15,
            warm_top_k: 5,
            prompt_max_tokens: DEFAULT_PROMPT_MAX_TOKENS,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.elite_selection_ratio > 0.0 && self.elite_selection_ratio <= 1.0) {
            return Err("elite_selection_ratio must be in (0, 1]".into());
        }
        if self.num_islands < 1 {
            return Err("num_islands must be >= 1".into());
        }
        if self.population_size < 1 {
            return Err("population_size must be >= 1".into());
        }
        if self.parallel_eval_degree < 1 {
            return Err("parallel_eval_degree must be >= 1".into());
        }
        if self.migration_interval == Some(0) {
            return Err("migration_interval must be >= 1 or null".into());
        }
        for (name, v) in [
            ("candidate_timeout_seconds", self.candidate_timeout_seconds),
            ("evolution_timeout_seconds", self.evolution_timeout_seconds),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and > 0"));
            }
        }
        if let MutatorKind::Mixed { p_llm } = self.mutator {
            if !(0.0..=1.0).contains(&p_llm) {
                return Err("mutator.p_llm must be in [0, 1]".into());
            }
        }
        self.grid.validate()
    }
}

/// Why a cycle stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    MaxIterations,
    Converged,
    EvolutionTimeout,
    Interrupted,
}

/// State after one iteration (iteration 0 is the initial population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_fitness: f64,
    pub best_genome: String,
    pub archive_size: usize,
    pub improved: bool,
}

/// One line of the evolution log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub genome_id: String,
    pub parent: Option<String>,
    pub mutation: String,
    pub island: usize,
    pub generation: usize,
    /// `None` for failed or timed-out candidates.
    pub fitness: Option<f64>,
    pub descriptor: Option<Cell>,
    pub status: CandidateStatus,
    pub eval_seconds: f64,
    pub cached: bool,
    pub inserted: bool,
}

/// Everything a cycle produces.
#[derive(Debug, Clone)]
pub struct CycleResult {
    pub best: Candidate,
    pub archive: Archive,
    pub islands: Vec<Archive>,
    pub history: Vec<IterationRecord>,
    pub log: Vec<CandidateRecord>,
    pub stop: StopCause,
    pub notices: Vec<String>,
    pub llm_stats: Option<LlmStats>,
    pub elapsed_seconds: f64,
}

impl CycleResult {
    /// The `k` best archived genomes, best first.
    pub fn top(&self, k: usize) -> Vec<PolicyGenome> {
        self.archive.ranked().into_iter().take(k).map(|c| c.genome.clone()).collect()
    }

    /// Iterations run after the initial population.
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    /// `iteration,best_fitness,normalized` with fitness normalized by the initial best.
    pub fn convergence_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["iteration", "best_fitness", "normalized"]);
        let initial = self.history.first().map(|h| h.best_fitness).unwrap_or(f64::NAN);
        for h in &self.history {
            let _ = w.write_record([
                h.iteration.to_string(),
                format!("{:.6}", h.best_fitness),
                format!("{:.6}", h.best_fitness / initial),
            ]);
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// First iteration whose best fitness is within `rel` of the final best.
    pub fn iterations_to_within(&self, rel: f64) -> usize {
        let target = self.best.fitness * (1.0 + rel);
        self.history
            .iter()
            .find(|h| h.best_fitness <= target)
            .map(|h| h.iteration)
            .unwrap_or(self.iterations())
    }

    /// Writes the evolution log as JSON lines.
    pub fn write_log(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.log {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()
    }
}

/// Why a cycle produced no result.
#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolve config: {0}")]
    InvalidConfig(String),
    #[error("snapshot has no monitoring points")]
    EmptySnapshot,
    #[error("all {} candidates failed; first failure: {}", .log.len(), first_failure(.log))]
    AllFailed { log: Vec<CandidateRecord> },
}

fn first_failure(log: &[CandidateRecord]) -> String {
    log.iter()
        .find_map(|r| match &r.status {
            CandidateStatus::Failed { reason } => Some(reason.clone()),
            CandidateStatus::TimedOut { after_seconds } => Some(format!("timed out after {after_seconds:.2}s")),
            CandidateStatus::Evaluated => None,
        })
        .unwrap_or_else(|| "none".into())
}

/// A genome waiting for evaluation.
struct Pending {
    genome: PolicyGenome,
    island: usize,
    generation: usize,
}

/// Finished evaluation of a pending genome.
struct Evaluated {
    candidate: Candidate,
    seconds: f64,
    cached: bool,
}

const RECENT_STRATEGIES: usize = 5;
const PROMPT_CHILDREN: usize = 6;
const ISLAND_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// One evolution cycle over a fixed snapshot.
pub struct Evolver {
    config: EvolveConfig,
    evaluator: Arc<dyn Evaluate>,
    llm: Option<Arc<LlmMutator>>,
    stop: Arc<AtomicBool>,
}

impl Evolver {
    pub fn new(config: EvolveConfig, evaluator: Arc<dyn Evaluate>) -> Self {
        Self {
            config,
            evaluator,
            llm: None,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Installs the LLM mutator used by the `llm` and `mixed` modes.
    pub fn with_llm(mut self, llm: Arc<LlmMutator>) -> Self {
        self.llm = Some(llm);
        self
    }

    /// Shares an external interrupt flag.
    pub fn with_stop(mut self, stop: Arc<AtomicBool>) -> Self {
        self.stop = stop;
        self
    }

    pub fn config(&self) -> &EvolveConfig {
        &self.config
    }

    /// Runs the cycle. `warm` replaces the seed genomes as the initial population's base.
    pub fn run(&self, warm: &[PolicyGenome]) -> Result<CycleResult, EvolveError> {
        self.config.validate().map_err(EvolveError::InvalidConfig)?;
        Cycle::new(self).run(warm)
    }
}

struct Cycle<'a> {
    ev: &'a Evolver,
    cfg: &'a EvolveConfig,
    start: Instant,
    deadline: Instant,
    cache: HashMap<String, (Option<EvalReport>, f64)>,
    islands: Vec<Archive>,
    global: Archive,
    rngs: Vec<ChaCha8Rng>,
    feedback: HashMap<String, Vec<ChildFeedback>>,
    log: Vec<CandidateRecord>,
    history: Vec<IterationRecord>,
    notices: Vec<String>,
    llm_down: bool,
}

impl<'a> Cycle<'a> {
    fn new(ev: &'a Evolver) -> Self {
        let cfg = &ev.config;
        let start = Instant::now();
        let rngs = (0..cfg.num_islands)
            .map(|i| ChaCha8Rng::seed_from_u64(cfg.seed ^ ISLAND_STREAM.wrapping_mul(i as u64 + 1)))
            .collect();
        Self {
            ev,
            cfg,
            start,
            deadline: start + Duration::from_secs_f64(cfg.evolution_timeout_seconds),
            cache: HashMap::new(),
            islands: vec![Archive::new(cfg.grid); cfg.num_islands],
            global: Archive::new(cfg.grid),
            rngs,
            feedback: HashMap::new(),
            log: Vec::new(),
            history: Vec::new(),
            notices: Vec::new(),
            llm_down: false,
        }
    }

    fn out_of_time(&self) -> bool {
        Instant::now() >= self.deadline
    }

    fn initial_population(&self, warm: &[PolicyGenome]) -> Vec<Pending> {
        let mut base: Vec<PolicyGenome> = Vec::new();
        let mut seen = HashSet::new();
        let source = if warm.is_empty() { seed_genomes() } else { warm.to_vec() };
        for g in source {
            if seen.insert(g.id.clone()) {
                base.push(g);
            }
        }
        let mut genomes = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut attempts = 0;
        while genomes.len() < self.cfg.population_size && attempts < self.cfg.population_size * 8 {
            let parent = &base[attempts % base.len()];
            let child = mutate_rule_based(parent, &[], &mut rng);
            if seen.insert(child.id.clone()) {
                genomes.push(child);
            }
            attempts += 1;
        }
        genomes.truncate(self.cfg.population_size.max(base.len()));
        genomes
            .into_iter()
            .enumerate()
            .map(|(i, genome)| Pending {
                genome,
                island: i % self.cfg.num_islands,
                generation: 0,
            })
            .collect()
    }

    fn candidate_from(&self, p: &Pending, report: Option<EvalReport>, seconds: f64) -> Candidate {
        match report {
            Some(r) => Candidate::evaluated(p.genome.clone(), r, &self.cfg.grid, p.island, p.generation),
            None => Candidate::timed_out(p.genome.clone(), seconds, p.island, p.generation),
        }
    }

    /// Evaluates `batch` in chunks of `parallel_eval_degree`, stopping between chunks once the
    /// cycle deadline has passed. Returns results in input order for the evaluated prefix.
    fn evaluate(&mut self, batch: Vec<Pending>) -> Vec<Evaluated> {
        let timeout = Duration::from_secs_f64(self.cfg.candidate_timeout_seconds);
        let mut out = Vec::with_capacity(batch.len());
        let mut iter = batch.into_iter().peekable();
        while iter.peek().is_some() {
            if self.out_of_time() || self.ev.stop.load(Ordering::Relaxed) {
                break;
            }
            let chunk: Vec<Pending> = iter.by_ref().take(self.cfg.parallel_eval_degree).collect();
            let mut running = Vec::new();
            for p in &chunk {
                if let Some((report, seconds)) = self.cache.get(&p.genome.id) {
                    running.push(Err((report.clone(), *seconds)));
                    continue;
                }
                let evaluator = Arc::clone(&self.ev.evaluator);
                let genome = p.genome.clone();
                running.push(Ok(spawn_eval(move |cancel| evaluator.evaluate(&genome, cancel), timeout)));
            }
            for (p, handle) in chunk.into_iter().zip(running) {
                let (report, seconds, cached) = match handle {
                    Err((report, seconds)) => (report, seconds, true),
                    Ok(pending) => match pending.wait() {
                        TimedEval::Finished { mut report, seconds } => {
                            if report.genome_id.is_empty() {
                                report.genome_id = p.genome.id.clone();
                                report.trace_id = self.ev.evaluator.trace_id().to_string();
                            }
                            (Some(report), seconds, false)
                        }
                        TimedEval::TimedOut { seconds } => (None, seconds, false),
                    },
                };
                if !cached {
                    self.cache.insert(p.genome.id.clone(), (report.clone(), seconds));
                }
                let candidate = self.candidate_from(&p, report, seconds);
                out.push(Evaluated {
                    candidate,
                    seconds,
                    cached,
                });
            }
        }
        out
    }

    /// Inserts into the owning island and the global archive; returns whether the global
    /// archive changed.
    fn admit(&mut self, e: &Evaluated) -> bool {
        let c = &e.candidate;
        self.islands[c.island].insert(c.clone());
        let changed = self.global.insert(c.clone()).changed();
        self.log.push(CandidateRecord {
            genome_id: c.genome.id.clone(),
            parent: c.genome.lineage.parent.clone(),
            mutation: c.genome.lineage.mutation.clone(),
            island: c.island,
            generation: c.generation,
            fitness: c.fitness.is_finite().then_some(c.fitness),
            descriptor: c.descriptor,
            status: c.status.clone(),
            eval_seconds: e.seconds,
            cached: e.cached,
            inserted: changed,
        });
        changed
    }

    fn record_iteration(&mut self, iteration: usize, improved: bool) {
        let best = self.global.best();
        self.history.push(IterationRecord {
            iteration,
            best_fitness: best.map(|b| b.fitness).unwrap_or(f64::INFINITY),
            best_genome: best.map(|b| b.genome.id.clone()).unwrap_or_default(),
            archive_size: self.global.len(),
            improved,
        });
    }

    fn recent_strategies(&self) -> Vec<String> {
        let n = self.log.len();
        self.log[n.saturating_sub(RECENT_STRATEGIES)..]
            .iter()
            .filter(|r| r.generation > 0)
            .map(|r| r.mutation.clone())
            .collect()
    }

    fn use_llm(&mut self, island: usize) -> bool {
        if self.llm_down {
            return false;
        }
        match self.cfg.mutator {
            MutatorKind::RuleBased => false,
            MutatorKind::Llm => true,
            MutatorKind::Mixed { p_llm } => self.rngs[island].gen::<f64>() < p_llm,
        }
    }

    fn llm_unavailable(&mut self, why: &str) {
        if !self.llm_down {
            self.llm_down = true;
            let notice = format!("LLM mutator unavailable ({why}); falling back to rule-based mutation");
            tracing::warn!("{notice}");
            self.notices.push(notice);
        }
    }

    fn make_child(&mut self, island: usize, parent: &Candidate) -> PolicyGenome {
        let children = self.feedback.get(&parent.genome.id).cloned().unwrap_or_default();
        if self.use_llm(island) {
            match self.ev.llm.clone() {
                None => self.llm_unavailable("no endpoint configured"),
                Some(llm) => {
                    let shown = &children[children.len().saturating_sub(PROMPT_CHILDREN)..];
                    let ctx = PopulationContext {
                        best_fitness: self.global.best().map(|b| b.fitness),
                        recent_strategies: self.recent_strategies(),
                    };
                    let report = parent.report.clone().expect("archived candidates have reports");
                    let prompt = assemble_prompt(&parent.genome, &report, shown, &ctx, self.cfg.prompt_max_tokens);
                    match llm.mutate(&parent.genome, &prompt, &mut self.rngs[island]) {
                        Ok(child) => return child,
                        Err(LlmError::Rejected(e)) => {
                            tracing::debug!(error = %e, "LLM edit rejected; using a rule-based mutation");
                        }
                        Err(e) => self.llm_unavailable(&e.to_string()),
                    }
                }
            }
        }
        let deltas: Vec<FeedbackDelta> = children.iter().map(|c| c.delta).collect();
        mutate_rule_based(&parent.genome, &deltas, &mut self.rngs[island])
    }

    fn pick_parent(&mut self, island: usize) -> Option<Candidate> {
        let ratio = self.cfg.elite_selection_ratio;
        let rng = &mut self.rngs[island];
        let archive = if self.islands[island].is_empty() && self.cfg.migration_interval.is_some() {
            &self.global
        } else {
            &self.islands[island]
        };
        archive.select_parent(ratio, rng).cloned()
    }

    fn remember_feedback(&mut self, parent: &Candidate, child: &Candidate) {
        let (Some(pr), Some(cr)) = (&parent.report, &child.report) else {
            return;
        };
        if !pr.succeeded() || !cr.succeeded() {
            return;
        }
        let Ok(delta) = compare_feedback(pr, cr) else {
            return;
        };
        let entry = self.feedback.entry(parent.genome.id.clone()).or_default();
        let label = match entry.len() {
            k if k < 26 => format!("Child {}", (b'A' + k as u8) as char),
            k => format!("Child {}", k + 1),
        };
        entry.push(ChildFeedback {
            label,
            mutation: child.genome.lineage.mutation.clone(),
            report: cr.clone(),
            delta,
        });
    }

    fn migrate(&mut self) {
        let n = self.islands.len();
        if n < 2 {
            return;
        }
        let emigrants: Vec<Option<Candidate>> = self.islands.iter().map(|a| a.best().cloned()).collect();
        for (i, e) in emigrants.into_iter().enumerate() {
            if let Some(c) = e {
                self.islands[(i + 1) % n].insert(c);
            }
        }
    }

    fn run(mut self, warm: &[PolicyGenome]) -> Result<CycleResult, EvolveError> {
        let initial = self.initial_population(warm);
        let evaluated = self.evaluate(initial);
        for e in &evaluated {
            self.admit(e);
        }
        if self.global.is_empty() {
            return Err(EvolveError::AllFailed { log: self.log });
        }
        self.record_iteration(0, true);

        let mut stop = StopCause::MaxIterations;
        let mut stall = 0;
        for iteration in 1..=self.cfg.max_iterations {
            if self.ev.stop.load(Ordering::Relaxed) {
                stop = StopCause::Interrupted;
                break;
            }
            if self.out_of_time() {
                stop = StopCause::EvolutionTimeout;
                break;
            }
            let mut parents = BTreeMap::new();
            let mut batch = Vec::new();
            for island in 0..self.cfg.num_islands {
                let Some(parent) = self.pick_parent(island) else {
                    continue;
                };
                let genome = self.make_child(island, &parent);
                parents.insert(batch.len(), parent);
                batch.push(Pending {
                    genome,
                    island,
                    generation: iteration,
                });
            }
            let results = self.evaluate(batch);
            let mut improved = false;
            for (i, e) in results.iter().enumerate() {
                self.remember_feedback(&parents[&i], &e.candidate);
                improved |= self.admit(e);
            }
            if let Some(k) = self.cfg.migration_interval {
                if iteration % k == 0 {
                    self.migrate();
                }
            }
            self.record_iteration(iteration, improved);
            stall = if improved { 0 } else { stall + 1 };
            if stall >= self.cfg.stall_window {
                stop = StopCause::Converged;
                break;
            }
        }

        let best = self.global.best().cloned().expect("archive is non-empty");
        Ok(CycleResult {
            best,
            archive: self.global,
            islands: self.islands,
            history: self.history,
            log: self.log,
            stop,
            notices: self.notices,
            llm_stats: self.ev.llm.as_ref().map(|l| l.stats()),
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
        })
    }
}

/// Convenience wrapper: evolves on `snapshot` under the analytical simulator.
pub fn evolve_cycle(
    snapshot: &Trace,
    catalog: &Catalog,
    replay: &ReplayConfig,
    config: &EvolveConfig,
    warm: &[PolicyGenome],
    llm: Option<Arc<LlmMutator>>,
) -> Result<CycleResult, EvolveError> {
    if snapshot.records.is_empty() {
        return Err(EvolveError::EmptySnapshot);
    }
    let evaluator = Arc::new(TraceEvaluator::new(snapshot.clone(), catalog.clone(), *replay));
    let mut evolver = Evolver::new(config.clone(), evaluator);
    if let Some(l) = llm {
        evolver = evolver.with_llm(l);
    }
    evolver.run(warm)
}
