//! Evolvable serving policies: a structured genome for the `(should_reschedule, schedule)` pair
//! and a pure interpreter turning a genome plus a [`Context`] into decisions.

use crate::catalog::Catalog;
use crate::plan::{clip_to_cluster, plan_makespan_penalized, Context, ReplicaGroup, ServingPlan};
use crate::scheduler::{
    greedy_schedule, objective, run_scheduler, Algorithm, ScheduleEnv, ScheduleError,
    ScheduleOutcome, SchedulerConfig, SchedulingInstance, SearchStatus,
};
use crate::sim::{reconfig_cost, SimConfig};
use crate::timing::{Budget, TimerModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::atomic::AtomicBool;
use thiserror::Error;

/// Budget of the quick greedy probe used by the cost-benefit trigger.
pub const PROBE_BUDGET_SECONDS: f64 = 0.05;

/// Default migration penalty weight of the penalized seed.
pub const DEFAULT_MIGRATION_WEIGHT: f64 = 1.0;

/// Genome validation and scheduling failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid genome: {0}")]
    Invalid(String),
    #[error("genome {genome}: {source}")]
    Schedule {
        genome: String,
        #[source]
        source: ScheduleError,
    },
    #[error("genome {genome}: plan exceeds the available cluster")]
    OverCapacity { genome: String },
    #[error("genome document is malformed: {0}")]
    Parse(String),
}

/// When a trigger fires, aside from cold start and hardware loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerVariant {
    /// Every `every` monitoring steps.
    Periodic { every: u32 },
    /// When any model's batch or sequence lengths move by more than `delta` relative.
    WorkloadDelta { delta: f64 },
    /// When the probed makespan gain exceeds the reconfiguration cost plus `margin` seconds.
    CostBenefit { margin: f64 },
    /// Only at cold start.
    Never,
}

/// The `should_reschedule` half of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub variant: TriggerVariant,
    #[serde(default = "default_true")]
    pub mandatory_on_cluster_change: bool,
}

fn default_true() -> bool {
    true
}

impl TriggerSpec {
    pub fn new(variant: TriggerVariant) -> Self {
        Self {
            variant,
            mandatory_on_cluster_change: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.variant {
            TriggerVariant::Periodic { every } if every < 1 => {
                Err("trigger.variant.every must be >= 1".into())
            }
            TriggerVariant::WorkloadDelta { delta } if !(delta >= 0.0 && delta.is_finite()) => {
                Err(format!("trigger.variant.delta must be finite and >= 0, got {delta}"))
            }
            TriggerVariant::CostBenefit { margin } if !(margin >= 0.0 && margin.is_finite()) => {
                Err(format!("trigger.variant.margin must be finite and >= 0, got {margin}"))
            }
            _ => Ok(()),
        }
    }
}

/// How aggressively a new plan may depart from the deployed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MigrationSpec {
    /// Diff-blind global re-optimization.
    Full,
    /// Keep every surviving group; re-place only displaced or new demand.
    Minimal,
    /// Reconfiguration cost enters the objective with weight `w`.
    Penalized { w: f64 },
}

impl MigrationSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            MigrationSpec::Penalized { w } if !(*w >= 0.0 && w.is_finite()) => {
                Err(format!("migration.w must be finite and >= 0, got {w}"))
            }
            _ => Ok(()),
        }
    }

    /// Migration weight used in the scheduler objective.
    pub fn weight(&self) -> f64 {
        match self {
            MigrationSpec::Penalized { w } => *w,
            _ => 0.0,
        }
    }
}

/// Provenance of a genome.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lineage {
    pub parent: Option<String>,
    pub mutation: String,
}

/// A complete serving policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyGenome {
    pub id: String,
    pub trigger: TriggerSpec,
    pub scheduler: SchedulerConfig,
    pub migration: MigrationSpec,
    pub lineage: Lineage,
}

#[derive(Serialize)]
struct GenomeBody<'a> {
    trigger: &'a TriggerSpec,
    scheduler: &'a SchedulerConfig,
    migration: &'a MigrationSpec,
}

impl PolicyGenome {
    /// Builds a genome and stamps its content id.
    pub fn new(trigger: TriggerSpec, scheduler: SchedulerConfig, migration: MigrationSpec, lineage: Lineage) -> Self {
        let mut g = Self {
            id: String::new(),
            trigger,
            scheduler,
            migration,
            lineage,
        };
        g.id = g.content_id();
        g
    }

    /// Short content hash over the decision-relevant fields (lineage excluded).
    pub fn content_id(&self) -> String {
        let body = GenomeBody {
            trigger: &self.trigger,
            scheduler: &self.scheduler,
            migration: &self.migration,
        };
        let text = serde_json::to_string(&body).expect("genome serialization is infallible");
        hex::encode(&Sha256::digest(text.as_bytes())[..6])
    }

    /// Recomputes the id after in-place edits.
    pub fn restamp(&mut self) {
        self.id = self.content_id();
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.trigger.validate().map_err(PolicyError::Invalid)?;
        self.scheduler
            .validate()
            .map_err(|e| PolicyError::Invalid(format!("scheduler: {e}")))?;
        self.migration.validate().map_err(PolicyError::Invalid)?;
        if self.id != self.content_id() {
            return Err(PolicyError::Invalid(format!(
                "id {} does not match content hash {}",
                self.id,
                self.content_id()
            )));
        }
        Ok(())
    }

    /// Canonical text form; equal genomes have equal text.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string_pretty(self).expect("genome serialization is infallible")
    }

    /// Parses and validates a genome document.
    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let g: PolicyGenome = serde_json::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    /// Short human-readable summary of the strategy.
    pub fn summary(&self) -> String {
        let trigger = match &self.trigger.variant {
            TriggerVariant::Periodic { every } => format!("periodic({every})"),
            TriggerVariant::WorkloadDelta { delta } => format!("workload_delta({delta:.3})"),
            TriggerVariant::CostBenefit { margin } => format!("cost_benefit({margin:.3})"),
            TriggerVariant::Never => "never".to_string(),
        };
        let algo = match self.scheduler.algorithm {
            Algorithm::Greedy => "greedy",
            Algorithm::LocalSearch => "local_search",
            Algorithm::Exact => "exact",
        };
        let migration = match &self.migration {
            MigrationSpec::Full => "full".to_string(),
            MigrationSpec::Minimal => "minimal".to_string(),
            MigrationSpec::Penalized { w } => format!("penalized({w:.3})"),
        };
        format!(
            "{algo} budget={:.3}s + {trigger} + {migration}",
            self.scheduler.time_budget_seconds
        )
    }
}

/// Shared read-only inputs of the policy interpreter.
#[derive(Debug, Clone, Copy)]
pub struct PolicyEnv<'a> {
    pub catalog: &'a Catalog,
    pub sim: &'a SimConfig,
    pub timer: TimerModel,
    pub cancel: Option<&'a AtomicBool>,
}

impl<'a> PolicyEnv<'a> {
    pub fn new(catalog: &'a Catalog, sim: &'a SimConfig) -> Self {
        Self {
            catalog,
            sim,
            timer: TimerModel::default(),
            cancel: None,
        }
    }
}

fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.max(1.0)
}

/// Largest relative change of any model's batch or sequence lengths between two snapshots.
pub fn workload_shift(old: &crate::plan::WorkloadSnapshot, new: &crate::plan::WorkloadSnapshot) -> f64 {
    let mut shift: f64 = 0.0;
    for model in old.keys().chain(new.keys()) {
        match (old.get(model), new.get(model)) {
            (Some(a), Some(b)) => {
                shift = shift
                    .max(relative_change(a.batch as f64, b.batch as f64))
                    .max(relative_change(a.prefill as f64, b.prefill as f64))
                    .max(relative_change(a.decode as f64, b.decode as f64));
            }
            (Some(w), None) | (None, Some(w)) if w.batch > 0 => return f64::INFINITY,
            _ => {}
        }
    }
    shift
}

/// The cost-benefit rule: reschedule iff the expected gain beats reconfiguration plus margin.
pub fn cost_benefit_fires(gain_seconds: f64, reconfig_seconds: f64, margin: f64) -> bool {
    gain_seconds > reconfig_seconds + margin
}

/// Expected gain and reconfiguration cost of moving to a quick greedy plan.
pub fn probe_gain(ctx: &Context, env: &PolicyEnv<'_>) -> Option<(f64, f64)> {
    let deployed = ctx.deployed_plan()?;
    let current = clip_to_cluster(deployed, &ctx.cluster);
    let cfg = SchedulerConfig::for_algorithm(Algorithm::Greedy);
    let inst = SchedulingInstance::new(env.catalog, env.sim, ctx, &cfg, 0.0).ok()?;
    let mut budget = Budget::new(env.timer, PROBE_BUDGET_SECONDS);
    let probe = greedy_schedule(&inst, &mut budget);
    let now = plan_makespan_penalized(&current, &ctx.workload, env.catalog, env.sim).t_balanced;
    let then = plan_makespan_penalized(&probe.plan, &ctx.workload, env.catalog, env.sim).t_balanced;
    Some((now - then, reconfig_cost(deployed, &probe.plan, env.catalog)))
}

/// Whether the policy replans at this monitoring point. Pure in its arguments.
pub fn should_reschedule(
    genome: &PolicyGenome,
    ctx: &Context,
    step_index: u64,
    last_reschedule_step: u64,
    env: &PolicyEnv<'_>,
) -> bool {
    let Some(deployed) = &ctx.deployed else {
        return true;
    };
    if deployed.plan.exceeds(&ctx.cluster) {
        return true;
    }
    if genome.trigger.mandatory_on_cluster_change && !deployed.cluster.same_as(&ctx.cluster) {
        return true;
    }
    match &genome.trigger.variant {
        TriggerVariant::Periodic { every } => {
            step_index.saturating_sub(last_reschedule_step) >= *every as u64
        }
        TriggerVariant::WorkloadDelta { delta } => workload_shift(&deployed.workload, &ctx.workload) > *delta,
        TriggerVariant::CostBenefit { margin } => match probe_gain(ctx, env) {
            Some((gain, reconfig)) => cost_benefit_fires(gain, reconfig, *margin),
            None => false,
        },
        TriggerVariant::Never => false,
    }
}

fn attach(genome: &PolicyGenome) -> impl Fn(ScheduleError) -> PolicyError + '_ {
    move |source| PolicyError::Schedule {
        genome: genome.id.clone(),
        source,
    }
}

/// Minimal-migration repair: keep surviving groups of still-demanded models and greedily place
/// only the demand they no longer cover. [`schedule`] falls back to the configured scheduler
/// when a demanded model is left without any replica.
fn minimal_repair(inst: &SchedulingInstance<'_>, deployed: &ServingPlan, budget: &mut Budget<'_>) -> ServingPlan {
    let ctx = inst.ctx;
    let kept = clip_to_cluster(deployed, &ctx.cluster);
    let mut groups: Vec<ReplicaGroup> = kept
        .groups
        .into_iter()
        .filter(|g| ctx.workload.get(&g.model).is_some_and(|w| w.batch > 0))
        .collect();
    let mut remaining: Vec<u32> = inst
        .gpus
        .iter()
        .map(|g| {
            let used: u64 = groups.iter().filter(|x| x.gpu == g.name).map(|x| x.gpus_used()).sum();
            g.available.saturating_sub(used as u32)
        })
        .collect();
    for mi in 0..inst.models.len() {
        let m = &inst.models[mi];
        let covered: u64 = groups.iter().filter(|g| g.model == m.name).map(|g| g.capacity()).sum();
        let need = (m.demand.batch as u64).saturating_sub(covered);
        if need == 0 {
            continue;
        }
        let (placed, _) = crate::scheduler::place_model(inst, mi, need, &mut remaining, budget);
        groups.extend(placed);
    }
    ServingPlan::new(groups)
}

/// Produces the next plan according to the genome's scheduler and migration settings.
pub fn schedule(genome: &PolicyGenome, ctx: &Context, env: &PolicyEnv<'_>) -> Result<ScheduleOutcome, PolicyError> {
    let sched_env = ScheduleEnv {
        timer: env.timer,
        cancel: env.cancel,
    };
    let repaired = match (&genome.migration, ctx.deployed_plan()) {
        (MigrationSpec::Minimal, Some(deployed)) => {
            let inst = SchedulingInstance::new(env.catalog, env.sim, ctx, &genome.scheduler, 0.0)
                .map_err(attach(genome))?;
            let mut budget = sched_env.budget(&genome.scheduler);
            let plan = minimal_repair(&inst, deployed, &mut budget);
            let stranded = inst.models.iter().any(|m| m.demand.batch > 0 && plan.groups_of(&m.name).next().is_none());
            (!stranded).then(|| {
                let shortfall = !crate::scheduler::uncovered(&inst, &plan).is_empty();
                ScheduleOutcome {
                    objective: objective(&inst, &plan),
                    plan,
                    work: budget.work(),
                    seconds: budget.charged(),
                    status: SearchStatus::Complete,
                    shortfall,
                }
            })
        }
        _ => None,
    };
    let outcome = match (repaired, &genome.migration, ctx.deployed_plan()) {
        (Some(outcome), _, _) => outcome,
        (None, migration, deployed) => {
            let inst = SchedulingInstance::new(env.catalog, env.sim, ctx, &genome.scheduler, migration.weight())
                .map_err(attach(genome))?;
            let seed = deployed.map(|p| clip_to_cluster(p, &ctx.cluster));
            run_scheduler(&inst, seed.as_ref(), &sched_env).map_err(attach(genome))?
        }
    };
    if outcome.plan.exceeds(&ctx.cluster) {
        return Err(PolicyError::OverCapacity {
            genome: genome.id.clone(),
        });
    }
    Ok(outcome)
}

fn seed(algorithm: Algorithm, variant: TriggerVariant, migration: MigrationSpec, name: &str) -> PolicyGenome {
    PolicyGenome::new(
        TriggerSpec::new(variant),
        SchedulerConfig::for_algorithm(algorithm),
        migration,
        Lineage {
            parent: None,
            mutation: format!("seed:{name}"),
        },
    )
}

/// Seed population: distinct algorithmic approaches to start evolution from.
pub fn seed_genomes() -> Vec<PolicyGenome> {
    vec![
        seed(
            Algorithm::Greedy,
            TriggerVariant::Periodic { every: 1 },
            MigrationSpec::Full,
            "greedy-periodic-full",
        ),
        seed(
            Algorithm::Exact,
            TriggerVariant::CostBenefit { margin: 0.0 },
            MigrationSpec::Penalized {
                w: DEFAULT_MIGRATION_WEIGHT,
            },
            "exact-costbenefit-penalized",
        ),
        seed(
            Algorithm::LocalSearch,
            TriggerVariant::WorkloadDelta { delta: 0.1 },
            MigrationSpec::Minimal,
            "localsearch-delta-minimal",
        ),
        seed(Algorithm::Exact, TriggerVariant::Never, MigrationSpec::Full, "exact-never-full"),
        seed(Algorithm::Greedy, TriggerVariant::Never, MigrationSpec::Full, "greedy-never-full"),
        seed(
            Algorithm::Greedy,
            TriggerVariant::Never,
            MigrationSpec::Minimal,
            "greedy-never-minimal",
        ),
    ]
}

/// Looks a seed up by its lineage name, e.g. `greedy-periodic-full`.
pub fn seed_by_name(name: &str) -> Option<PolicyGenome> {
    seed_genomes()
        .into_iter()
        .find(|g| g.lineage.mutation == format!("seed:{name}"))
}

/// Names of all seeds, in order.
pub fn seed_names() -> Vec<String> {
    seed_genomes()
        .into_iter()
        .map(|g| g.lineage.mutation.trim_start_matches("seed:").to_string())
        .collect()
}
