//! Plan search: greedy, local search, branch-and-bound and a brute-force oracle, all sharing
//! one objective.

mod exact;
mod greedy;
mod local;
mod oracle;

pub use exact::exact_schedule;
pub use greedy::greedy_schedule;
pub(crate) use greedy::place_model;
pub use local::local_search_schedule;
pub use oracle::{brute_force_oracle, BoundMode, ORACLE_LIMIT};

use crate::catalog::{weight_size, Catalog};
use crate::plan::{
    plan_makespan_penalized, valid_tp_degrees, Context, ModelWorkload, ReplicaGroup, ServingPlan,
};
use crate::sim::{memory_feasible, reconfig_cost, SimConfig};
use crate::timing::{Budget, StopReason, TimerModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::AtomicBool;
use thiserror::Error;

/// Batch sizes offered when the curated policy is active.
pub const CURATED_BATCHES: [u32; 14] = [1, 2, 3, 4, 6, 8, 16, 32, 64, 20, 24, 28, 40, 48];

/// Scheduling errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("scheduler configuration error: {0}")]
    Config(String),
    #[error("model `{0}` is not in the catalog")]
    UnknownModel(String),
    #[error("no feasible plan: {}", reasons.join("; "))]
    Infeasible { reasons: Vec<String> },
    #[error("no feasible plan found before the search stopped ({reason:?})")]
    NoIncumbent { reason: StopReason },
    #[error("search space of {size} assignments exceeds the oracle limit of {limit}")]
    SearchSpaceTooLarge { size: u64, limit: u64 },
}

/// Which search algorithm a policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Greedy,
    LocalSearch,
    Exact,
}

/// How per-replica batch candidates are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchCandidatePolicy {
    ExhaustiveUpToCap,
    Curated,
}

/// Models at least `min_weight_bytes` large must use TP of at least `min_tp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpFloorRule {
    pub min_weight_bytes: u64,
    pub min_tp: u32,
}

impl TpFloorRule {
    pub fn default_rule() -> Self {
        Self {
            min_weight_bytes: 60_000_000_000,
            min_tp: 4,
        }
    }
}

/// Scheduler parameters carried by a policy genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    pub algorithm: Algorithm,
    pub time_budget_seconds: f64,
    pub batch_candidate_policy: BatchCandidatePolicy,
    pub curated_set: Vec<u32>,
    pub tp_floor_rules: Vec<TpFloorRule>,
    pub secondary_objective_epsilon: f64,
    pub relative_gap: f64,
    pub node_limit: Option<u64>,
    pub seed: u64,
}

impl SchedulerConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let time_budget_seconds = match algorithm {
            Algorithm::Greedy => 1.0,
            Algorithm::LocalSearch => 5.0,
            Algorithm::Exact => 30.0,
        };
        Self {
            algorithm,
            time_budget_seconds,
            batch_candidate_policy: BatchCandidatePolicy::Curated,
            curated_set: CURATED_BATCHES.to_vec(),
            tp_floor_rules: vec![TpFloorRule::default_rule()],
            secondary_objective_epsilon: 0.05,
            relative_gap: 0.003,
            node_limit: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.secondary_objective_epsilon >= 0.0 && self.secondary_objective_epsilon.is_finite()) {
            return Err("secondary_objective_epsilon must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.relative_gap) {
            return Err(format!("relative_gap must be in [0, 1), got {}", self.relative_gap));
        }
        if !(self.time_budget_seconds > 0.0) {
            return Err(format!(
                "time_budget_seconds must be > 0, got {}",
                self.time_budget_seconds
            ));
        }
        if self.curated_set.contains(&0) {
            return Err("curated_set must not contain 0".into());
        }
        if self.batch_candidate_policy == BatchCandidatePolicy::Curated && self.curated_set.is_empty() {
            return Err("curated_set must not be empty under the curated policy".into());
        }
        for rule in &self.tp_floor_rules {
            if rule.min_tp == 0 {
                return Err("tp floor rule min_tp must be >= 1".into());
            }
        }
        Ok(())
    }

    /// Minimum TP degree the floor rules impose on a model of the given size.
    pub fn tp_floor(&self, weight_bytes: u64) -> u32 {
        self.tp_floor_rules
            .iter()
            .filter(|r| weight_bytes >= r.min_weight_bytes)
            .map(|r| r.min_tp)
            .max()
            .unwrap_or(1)
    }
}

/// Ordered per-replica batch candidates ℬ_z for one model's demand.
pub fn batch_candidates(demand: &ModelWorkload, cfg: &SchedulerConfig) -> Result<Vec<u32>, ScheduleError> {
    let cap = demand.cap;
    if cap < 1 {
        return Err(ScheduleError::Config("batch cap must be >= 1".into()));
    }
    let mut set: Vec<u32> = match cfg.batch_candidate_policy {
        BatchCandidatePolicy::ExhaustiveUpToCap => (1..=cap).collect(),
        BatchCandidatePolicy::Curated => {
            let mut v: Vec<u32> = cfg.curated_set.iter().copied().filter(|&b| b <= cap).collect();
            let lambda = demand.batch;
            if lambda > 0 {
                let mut d = 1;
                while d * d <= lambda {
                    if lambda % d == 0 {
                        v.push(d);
                        v.push(lambda / d);
                    }
                    d += 1;
                }
            }
            v.retain(|&b| b >= 1 && b <= cap);
            v
        }
    };
    set.sort_unstable();
    set.dedup();
    if set.is_empty() {
        return Err(ScheduleError::Config("no batch candidates under the cap".into()));
    }
    Ok(set)
}

/// `min(⌊κ_g/t⌋, ⌈λ_z/b⌉)` with κ taken from the current cluster state.
pub fn per_variable_bound(model: &str, gpu: &str, tp: u32, batch: u32, ctx: &Context) -> u32 {
    if tp == 0 || batch == 0 {
        return 0;
    }
    let kappa = ctx.cluster.available(gpu);
    let lambda = ctx.workload.get(model).map(|w| w.batch).unwrap_or(0);
    (kappa / tp).min(lambda.div_ceil(batch))
}

/// One admissible (gpu, tp, batch) choice for a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub gpu: usize,
    pub tp: u32,
    pub batch: u32,
    pub latency: f64,
    /// Per-variable bound M.
    pub bound: u32,
    /// Bound used in search; widened to the deployed count when migration is penalized.
    pub effective_bound: u32,
}

/// A demanded model with its materialized candidate set.
#[derive(Debug, Clone)]
pub struct InstanceModel {
    pub name: String,
    pub weight_bytes: u64,
    pub rank: usize,
    pub secondary_weight: f64,
    pub demand: ModelWorkload,
    pub batches: Vec<u32>,
    /// Sorted by (latency, gpu name, tp, batch).
    pub candidates: Vec<Candidate>,
}

/// A GPU type with devices available in the current cluster.
#[derive(Debug, Clone)]
pub struct InstanceGpu {
    pub name: String,
    pub available: u32,
}

/// Everything a scheduler needs for one decision.
#[derive(Debug)]
pub struct SchedulingInstance<'a> {
    pub catalog: &'a Catalog,
    pub sim: &'a SimConfig,
    pub ctx: &'a Context,
    pub config: &'a SchedulerConfig,
    pub migration_weight: f64,
    pub epsilon: f64,
    /// Demanded models, largest first.
    pub models: Vec<InstanceModel>,
    pub gpus: Vec<InstanceGpu>,
    /// Secondary objective weight of every model in the workload.
    pub secondary: BTreeMap<String, f64>,
}

impl<'a> SchedulingInstance<'a> {
    pub fn new(
        catalog: &'a Catalog,
        sim: &'a SimConfig,
        ctx: &'a Context,
        config: &'a SchedulerConfig,
        migration_weight: f64,
    ) -> Result<Self, ScheduleError> {
        config.validate().map_err(ScheduleError::Config)?;
        if !(migration_weight >= 0.0 && migration_weight.is_finite()) {
            return Err(ScheduleError::Config(format!(
                "migration weight must be finite and >= 0, got {migration_weight}"
            )));
        }
        let gpus: Vec<InstanceGpu> = ctx
            .cluster
            .0
            .iter()
            .filter(|(name, &count)| count > 0 && catalog.gpu(name).is_some())
            .map(|(name, &available)| InstanceGpu {
                name: name.clone(),
                available,
            })
            .collect();

        let mut sized = Vec::new();
        for name in ctx.workload.keys() {
            let spec = catalog
                .model(name)
                .ok_or_else(|| ScheduleError::UnknownModel(name.clone()))?;
            sized.push((weight_size(spec), name.clone()));
        }
        sized.sort();
        let secondary: BTreeMap<String, f64> = sized
            .iter()
            .enumerate()
            .map(|(rank, (_, name))| (name.clone(), 1.0 + 0.5 * rank as f64))
            .collect();
        let ranks: BTreeMap<&String, usize> =
            sized.iter().enumerate().map(|(r, (_, n))| (n, r)).collect();

        let mut deployed_counts: BTreeMap<(String, String, u32), u32> = BTreeMap::new();
        if migration_weight > 0.0 {
            for g in ctx.deployed_plan().map(|p| p.groups.as_slice()).unwrap_or_default() {
                *deployed_counts.entry((g.model.clone(), g.gpu.clone(), g.tp)).or_default() += g.count;
            }
        }

        let mut models = Vec::new();
        for (weight_bytes, name) in sized.iter().rev() {
            let demand = ctx.workload[name];
            if demand.batch == 0 {
                continue;
            }
            let spec = catalog.model(name).expect("checked above");
            let batches = batch_candidates(&demand, config)?;
            let floor = config.tp_floor(*weight_bytes);
            let mut candidates = Vec::new();
            for (gi, gpu_entry) in gpus.iter().enumerate() {
                let gpu = catalog.gpu(&gpu_entry.name).expect("filtered above");
                for tp in valid_tp_degrees(gpu.gpus_per_node) {
                    if tp < floor || spec.attn_heads % tp as u64 != 0 || !memory_feasible(spec, gpu, tp, sim) {
                        continue;
                    }
                    for &batch in &batches {
                        let bound = per_variable_bound(name, &gpu_entry.name, tp, batch, ctx);
                        let deployed = deployed_counts
                            .get(&(name.clone(), gpu_entry.name.clone(), tp))
                            .copied()
                            .unwrap_or(0)
                            .min(gpu_entry.available / tp);
                        let effective_bound = bound.max(deployed);
                        if effective_bound == 0 {
                            continue;
                        }
                        let group = ReplicaGroup {
                            model: name.clone(),
                            gpu: gpu_entry.name.clone(),
                            tp,
                            batch,
                            count: 1,
                        };
                        let latency = crate::plan::group_latency(&group, &demand, catalog, sim);
                        candidates.push(Candidate {
                            gpu: gi,
                            tp,
                            batch,
                            latency,
                            bound,
                            effective_bound,
                        });
                    }
                }
            }
            candidates.sort_by(|a, b| {
                a.latency
                    .total_cmp(&b.latency)
                    .then_with(|| gpus[a.gpu].name.cmp(&gpus[b.gpu].name))
                    .then(a.tp.cmp(&b.tp))
                    .then(a.batch.cmp(&b.batch))
            });
            models.push(InstanceModel {
                name: name.clone(),
                weight_bytes: *weight_bytes,
                rank: ranks[name],
                secondary_weight: secondary[name],
                demand,
                batches,
                candidates,
            });
        }
        Ok(Self {
            catalog,
            sim,
            ctx,
            config,
            migration_weight,
            epsilon: config.secondary_objective_epsilon,
            models,
            gpus,
            secondary,
        })
    }

    /// Builds a plan group from a candidate.
    pub fn group(&self, model: usize, cand: &Candidate, count: u32) -> ReplicaGroup {
        ReplicaGroup {
            model: self.models[model].name.clone(),
            gpu: self.gpus[cand.gpu].name.clone(),
            tp: cand.tp,
            batch: cand.batch,
            count,
        }
    }

    /// Whether a group is admissible under this instance's candidate filters (batch aside).
    pub fn admissible(&self, group: &ReplicaGroup) -> bool {
        let (Some(model), Some(gpu)) = (self.catalog.model(&group.model), self.catalog.gpu(&group.gpu)) else {
            return false;
        };
        group.batch >= 1
            && valid_tp_degrees(gpu.gpus_per_node).contains(&group.tp)
            && model.attn_heads % group.tp as u64 == 0
            && group.tp >= self.config.tp_floor(weight_size(model))
            && memory_feasible(model, gpu, group.tp, self.sim)
    }

    fn penalty(&self) -> f64 {
        self.sim.infeasible_penalty_seconds
    }
}

/// Objective value and its components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Objective {
    pub makespan: f64,
    pub weighted: f64,
    pub reconfig: f64,
    pub total: f64,
}

/// `T_balanced + ε·Σ w_z·L_z + w·reconfig_cost(deployed, plan)`.
pub fn objective(inst: &SchedulingInstance<'_>, plan: &ServingPlan) -> Objective {
    let makespan = plan_makespan_penalized(plan, &inst.ctx.workload, inst.catalog, inst.sim);
    let mut t = makespan.t_balanced;
    if plan.exceeds(&inst.ctx.cluster) {
        t = t.max(inst.penalty());
    }
    let mut weighted = 0.0;
    for (model, latency) in &makespan.per_model {
        weighted += inst.secondary.get(model).copied().unwrap_or(1.0) * latency;
    }
    let reconfig = match inst.ctx.deployed_plan() {
        Some(prev) if inst.migration_weight > 0.0 => reconfig_cost(prev, plan, inst.catalog),
        _ => 0.0,
    };
    Objective {
        makespan: t,
        weighted,
        reconfig,
        total: t + inst.epsilon * weighted + inst.migration_weight * reconfig,
    }
}

/// How a search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Complete,
    Optimal,
    WithinGap,
    LocalOptimum,
    Stopped(StopReason),
}

/// A plan with its objective and the work spent producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub plan: ServingPlan,
    pub objective: Objective,
    pub work: u64,
    pub seconds: f64,
    pub status: SearchStatus,
    /// Demand could not be fully covered; serial passes apply.
    pub shortfall: bool,
}

/// Timer and cancellation shared by one scheduler invocation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScheduleEnv<'a> {
    pub timer: TimerModel,
    pub cancel: Option<&'a AtomicBool>,
}

impl<'a> ScheduleEnv<'a> {
    pub fn budget(&self, cfg: &SchedulerConfig) -> Budget<'a> {
        Budget::new(self.timer, cfg.time_budget_seconds)
            .with_node_limit(cfg.node_limit)
            .with_cancel(self.cancel)
    }
}

/// Runs the configured algorithm. `seed_plan` seeds local search.
pub fn run_scheduler(
    inst: &SchedulingInstance<'_>,
    seed_plan: Option<&ServingPlan>,
    env: &ScheduleEnv<'_>,
) -> Result<ScheduleOutcome, ScheduleError> {
    let mut budget = env.budget(inst.config);
    let mut outcome = match inst.config.algorithm {
        Algorithm::Greedy => greedy_schedule(inst, &mut budget),
        Algorithm::LocalSearch => {
            let seed = match seed_plan {
                Some(p) => p.clone(),
                None => greedy_schedule(inst, &mut budget).plan,
            };
            local_search_schedule(inst, &seed, &mut budget)
        }
        Algorithm::Exact => exact_schedule(inst, &mut budget)?,
    };
    outcome.work = budget.work();
    outcome.seconds = budget.charged();
    Ok(outcome)
}

/// Demand left uncovered by a plan, per demanded model.
pub(crate) fn uncovered(inst: &SchedulingInstance<'_>, plan: &ServingPlan) -> Vec<(usize, u64)> {
    inst.models
        .iter()
        .enumerate()
        .filter_map(|(i, m)| {
            let cap: u64 = plan.groups_of(&m.name).map(|g| g.capacity()).sum();
            let need = m.demand.batch as u64;
            (cap < need).then(|| (i, need - cap))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::catalog::{GpuType, ModelSpec};
    use crate::plan::{ClusterState, WorkloadSnapshot};

    #[test]
    fn curated_candidates_with_divisors() {
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Exact);
        let demand = ModelWorkload {
            batch: 100,
            prefill: 1,
            decode: 1,
            cap: 48,
        };
        // union of the curated set and divisors of 100, capped at 48, computed by hand
        let expected = vec![1, 2, 3, 4, 5, 6, 8, 10, 16, 20, 24, 25, 28, 32, 40, 48];
        assert_eq!(batch_candidates(&demand, &cfg).unwrap(), expected);
    }

    #[test]
    fn cap_of_one_collapses() {
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Exact);
        let demand = ModelWorkload {
            batch: 100,
            prefill: 1,
            decode: 1,
            cap: 1,
        };
        assert_eq!(batch_candidates(&demand, &cfg).unwrap(), vec![1]);
        let zero = ModelWorkload { cap: 0, ..demand };
        assert!(batch_candidates(&zero, &cfg).is_err());
    }

    #[test]
    fn uncapped_curated_set() {
        let mut set = CURATED_BATCHES.to_vec();
        set.sort_unstable();
        assert_eq!(set, vec![1, 2, 3, 4, 6, 8, 16, 20, 24, 28, 32, 40, 48, 64]);
    }

    #[test]
    fn exhaustive_candidates() {
        let mut cfg = SchedulerConfig::for_algorithm(Algorithm::Exact);
        cfg.batch_candidate_policy = BatchCandidatePolicy::ExhaustiveUpToCap;
        let demand = ModelWorkload {
            batch: 7,
            prefill: 1,
            decode: 1,
            cap: 3,
        };
        assert_eq!(batch_candidates(&demand, &cfg).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn bound_examples() {
        let mut workload = WorkloadSnapshot::new();
        workload.insert(
            "m".into(),
            ModelWorkload {
                batch: 100,
                prefill: 1,
                decode: 1,
                cap: 64,
            },
        );
        workload.insert(
            "idle".into(),
            ModelWorkload {
                batch: 0,
                prefill: 1,
                decode: 1,
                cap: 64,
            },
        );
        let ctx = Context::cold(workload, ClusterState::new([("g".to_string(), 8)]));
        assert_eq!(per_variable_bound("m", "g", 4, 32, &ctx), 2);
        assert_eq!(per_variable_bound("idle", "g", 1, 1, &ctx), 0);
        assert_eq!(per_variable_bound("m", "g", 16, 1, &ctx), 0);
    }

    pub(crate) fn small_gpu(name: &str, count: u32, speed: f64) -> GpuType {
        GpuType {
            name: name.into(),
            mem_capacity_bytes: 80e9,
            peak_fp16_flops: 300e12 * speed,
            hbm_bandwidth: 2e12 * speed,
            pcie_bandwidth: 32e9 * speed,
            gpus_per_node: 2,
            intra_node_bandwidth: 300e9,
            inter_node_bandwidth: 25e9,
            total_count: count,
        }
    }

    pub(crate) fn small_model(name: &str, layers: u64) -> ModelSpec {
        ModelSpec {
            name: name.into(),
            layers,
            hidden_dim: 1024,
            intermediate_dim: 4096,
            vocab_size: 32000,
            attn_heads: 8,
            kv_heads: 8,
            head_dim: 128,
            precision_bits: 16,
            pcie_coeff: 1.0,
        }
    }

    #[test]
    fn weighted_secondary_breaks_ties() {
        // same makespan, lower weighted sum wins
        let catalog = Catalog::new(
            vec![small_gpu("g", 8, 1.0)],
            vec![small_model("a", 4), small_model("b", 8)],
        )
        .unwrap();
        let sim = SimConfig::default();
        let mut workload = WorkloadSnapshot::new();
        for m in ["a", "b"] {
            workload.insert(
                m.into(),
                ModelWorkload {
                    batch: 4,
                    prefill: 64,
                    decode: 64,
                    cap: 4,
                },
            );
        }
        let ctx = Context::cold(workload, ClusterState::new([("g".to_string(), 8)]));
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Exact);
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        assert_eq!(inst.models[0].name, "b");
        assert_eq!(inst.secondary["a"], 1.0);
        assert_eq!(inst.secondary["b"], 1.5);
        let outcome = run_scheduler(&inst, None, &ScheduleEnv::default()).unwrap();
        let slow_a = ServingPlan::new(
            outcome
                .plan
                .groups
                .iter()
                .cloned()
                .map(|mut g| {
                    if g.model == "a" {
                        g.batch = 1;
                        g.count = 4;
                    }
                    g
                })
                .collect(),
        );
        let alt = objective(&inst, &slow_a);
        assert!(outcome.objective.total <= alt.total);
    }
}
