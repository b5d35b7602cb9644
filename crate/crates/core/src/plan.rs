//! Serving plans, workloads, cluster state, validation, diffing and plan makespan.

use crate::catalog::Catalog;
use crate::sim::{memory_feasible, serve_latency_cached, SimConfig};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// One set of identical replicas of a model on one GPU type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaGroup {
    pub model: String,
    pub gpu: String,
    pub tp: u32,
    pub batch: u32,
    pub count: u32,
}

impl ReplicaGroup {
    /// The activation indicator y.
    pub fn active(&self) -> bool {
        self.count >= 1
    }

    /// GPUs held by the group.
    pub fn gpus_used(&self) -> u64 {
        self.tp as u64 * self.count as u64
    }

    /// Concurrent requests the group serves per pass.
    pub fn capacity(&self) -> u64 {
        self.batch as u64 * self.count as u64
    }
}

/// A cluster execution snapshot.
///
/// Groups are kept in canonical order with duplicates merged and empty groups dropped,
/// so structural equality matches semantic equality.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServingPlan {
    pub groups: Vec<ReplicaGroup>,
}

impl ServingPlan {
    pub fn new(groups: Vec<ReplicaGroup>) -> Self {
        let mut merged: BTreeMap<(String, String, u32, u32), u32> = BTreeMap::new();
        for g in groups {
            if g.count == 0 {
                continue;
            }
            *merged
                .entry((g.model, g.gpu, g.tp, g.batch))
                .or_default() += g.count;
        }
        let groups = merged
            .into_iter()
            .map(|((model, gpu, tp, batch), count)| ReplicaGroup {
                model,
                gpu,
                tp,
                batch,
                count,
            })
            .collect();
        Self { groups }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// GPUs used per GPU type.
    pub fn gpu_usage(&self) -> BTreeMap<String, u64> {
        let mut usage = BTreeMap::new();
        for g in &self.groups {
            *usage.entry(g.gpu.clone()).or_default() += g.gpus_used();
        }
        usage
    }

    /// Active groups of one model.
    pub fn groups_of<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a ReplicaGroup> + 'a {
        self.groups.iter().filter(move |g| g.model == model && g.active())
    }

    /// Models with at least one active group.
    pub fn models(&self) -> BTreeSet<String> {
        self.groups
            .iter()
            .filter(|g| g.active())
            .map(|g| g.model.clone())
            .collect()
    }

    /// Whether the plan needs more devices of some type than the cluster offers.
    pub fn exceeds(&self, cluster: &ClusterState) -> bool {
        self.gpu_usage()
            .iter()
            .any(|(gpu, &used)| used > cluster.available(gpu) as u64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: ServingPlan = serde_json::from_str(text)?;
        Ok(Self::new(raw.groups))
    }
}

impl fmt::Display for ServingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.groups.is_empty() {
            return write!(f, "(empty plan)");
        }
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}@{} tp{} b{} x{}", g.model, g.gpu, g.tp, g.batch, g.count)?;
        }
        Ok(())
    }
}

/// Demand for one model at one monitoring point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelWorkload {
    /// Total concurrent requests λ.
    pub batch: u32,
    /// Prefill length s^p.
    pub prefill: u32,
    /// Decode length s^d.
    pub decode: u32,
    /// Per-replica batch cap b^max.
    pub cap: u32,
}

/// Per-model demand at one monitoring point.
pub type WorkloadSnapshot = BTreeMap<String, ModelWorkload>;

/// Available devices per GPU type at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterState(pub BTreeMap<String, u32>);

impl ClusterState {
    pub fn new(counts: impl IntoIterator<Item = (String, u32)>) -> Self {
        Self(counts.into_iter().collect())
    }

    /// Available count; absent types have none.
    pub fn available(&self, gpu: &str) -> u32 {
        self.0.get(gpu).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().map(|&c| c as u64).sum()
    }

    /// Same availability, ignoring explicit zero entries.
    pub fn same_as(&self, other: &ClusterState) -> bool {
        let keys: BTreeSet<&String> = self.0.keys().chain(other.0.keys()).collect();
        keys.into_iter().all(|k| self.available(k) == other.available(k))
    }
}

/// A plan together with the conditions it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub plan: ServingPlan,
    pub workload: WorkloadSnapshot,
    pub cluster: ClusterState,
}

/// Everything a policy sees at a monitoring point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub workload: WorkloadSnapshot,
    pub cluster: ClusterState,
    pub deployed: Option<Deployment>,
}

impl Context {
    pub fn cold(workload: WorkloadSnapshot, cluster: ClusterState) -> Self {
        Self {
            workload,
            cluster,
            deployed: None,
        }
    }

    pub fn deployed_plan(&self) -> Option<&ServingPlan> {
        self.deployed.as_ref().map(|d| &d.plan)
    }
}

/// Valid TP degrees for a GPU type: powers of two up to `2·ν_g`, capped at 8.
pub fn valid_tp_degrees(gpus_per_node: u32) -> Vec<u32> {
    let limit = (2 * gpus_per_node).min(8);
    let mut out = Vec::new();
    let mut t = 1;
    while t <= limit {
        out.push(t);
        t *= 2;
    }
    out
}

/// One constraint violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownModel { group: ReplicaGroup },
    UnknownGpu { group: ReplicaGroup },
    InvalidTp { group: ReplicaGroup },
    ZeroBatch { group: ReplicaGroup },
    Infeasible { group: ReplicaGroup },
    Capacity { gpu: String, used: u64, available: u32 },
    Uncovered { model: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownModel { group } => write!(f, "unknown model `{}`", group.model),
            Violation::UnknownGpu { group } => write!(f, "unknown gpu type `{}`", group.gpu),
            Violation::InvalidTp { group } => write!(
                f,
                "tp {} is not valid for `{}` on `{}`",
                group.tp, group.model, group.gpu
            ),
            Violation::ZeroBatch { group } => {
                write!(f, "group `{}` on `{}` has batch 0", group.model, group.gpu)
            }
            Violation::Infeasible { group } => write!(
                f,
                "`{}` does not fit on `{}` at tp {}",
                group.model, group.gpu, group.tp
            ),
            Violation::Capacity {
                gpu,
                used,
                available,
            } => write!(f, "gpu type `{gpu}` uses {used} devices but {available} are available"),
            Violation::Uncovered { model } => {
                write!(f, "model `{model}` has demand but no active group")
            }
        }
    }
}

/// Checks capacity, feasibility and coverage; returns every violation found.
pub fn validate(
    plan: &ServingPlan,
    ctx: &Context,
    catalog: &Catalog,
    cfg: &SimConfig,
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    for g in &plan.groups {
        let model = catalog.model(&g.model);
        let gpu = catalog.gpu(&g.gpu);
        if model.is_none() {
            violations.push(Violation::UnknownModel { group: g.clone() });
        }
        if gpu.is_none() {
            violations.push(Violation::UnknownGpu { group: g.clone() });
        }
        if g.batch == 0 {
            violations.push(Violation::ZeroBatch { group: g.clone() });
        }
        if let (Some(model), Some(gpu)) = (model, gpu) {
            let tp_ok = valid_tp_degrees(gpu.gpus_per_node).contains(&g.tp)
                && model.attn_heads % g.tp as u64 == 0;
            if !tp_ok {
                violations.push(Violation::InvalidTp { group: g.clone() });
            } else if !memory_feasible(model, gpu, g.tp, cfg) {
                violations.push(Violation::Infeasible { group: g.clone() });
            }
        }
    }
    for (gpu, used) in plan.gpu_usage() {
        let available = ctx.cluster.available(&gpu);
        if used > available as u64 {
            violations.push(Violation::Capacity {
                gpu,
                used,
                available,
            });
        }
    }
    let served = plan.models();
    for (model, demand) in &ctx.workload {
        if demand.batch > 0 && !served.contains(model) {
            violations.push(Violation::Uncovered {
                model: model.clone(),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Models whose multiset of (gpu, tp, count, batch) tuples differs between the plans.
pub fn plan_diff(prev: &ServingPlan, next: &ServingPlan) -> BTreeSet<String> {
    fn tuples(plan: &ServingPlan) -> BTreeMap<String, Vec<(String, u32, u32, u32)>> {
        let mut out: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for g in plan.groups.iter().filter(|g| g.active()) {
            out.entry(g.model.clone())
                .or_default()
                .push((g.gpu.clone(), g.tp, g.count, g.batch));
        }
        for v in out.values_mut() {
            v.sort();
        }
        out
    }
    let a = tuples(prev);
    let b = tuples(next);
    a.keys()
        .chain(b.keys())
        .filter(|m| a.get(*m) != b.get(*m))
        .cloned()
        .collect()
}

/// Per-model weight footprint: replicas held per (gpu, tp), ignoring batch.
pub fn footprint(plan: &ServingPlan) -> BTreeMap<String, BTreeMap<(String, u32), u64>> {
    let mut out: BTreeMap<String, BTreeMap<(String, u32), u64>> = BTreeMap::new();
    for g in plan.groups.iter().filter(|g| g.active()) {
        *out.entry(g.model.clone())
            .or_default()
            .entry((g.gpu.clone(), g.tp))
            .or_default() += g.count as u64;
    }
    out
}

/// Plan-level latency errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("model `{0}` has positive demand but no active replica group")]
    Uncovered(String),
}

/// Global makespan and per-model completion latencies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Makespan {
    pub t_balanced: f64,
    pub per_model: BTreeMap<String, f64>,
}

/// Latency of one group, or Λ_∞ when it cannot run.
pub fn group_latency(
    group: &ReplicaGroup,
    demand: &ModelWorkload,
    catalog: &Catalog,
    cfg: &SimConfig,
) -> f64 {
    let penalty = cfg.infeasible_penalty_seconds;
    let (Some(model), Some(gpu)) = (catalog.model(&group.model), catalog.gpu(&group.gpu)) else {
        return penalty;
    };
    if group.batch == 0 || !memory_feasible(model, gpu, group.tp, cfg) {
        return penalty;
    }
    serve_latency_cached(
        model,
        gpu,
        group.tp,
        group.batch as u64,
        demand.prefill as u64,
        demand.decode as u64,
        cfg.decode_sum,
    )
    .map(|l| l.min(penalty))
    .unwrap_or(penalty)
}

/// Completion latency of one model: slowest active group times the number of serial passes.
/// `None` when the model has demand but no active group.
pub fn model_latency(
    plan: &ServingPlan,
    model: &str,
    demand: &ModelWorkload,
    catalog: &Catalog,
    cfg: &SimConfig,
) -> Option<f64> {
    if demand.batch == 0 {
        return Some(0.0);
    }
    let mut slowest: f64 = 0.0;
    let mut capacity: u64 = 0;
    let mut any = false;
    for g in plan.groups_of(model) {
        any = true;
        capacity += g.capacity();
        slowest = slowest.max(group_latency(g, demand, catalog, cfg));
    }
    if !any {
        return None;
    }
    let penalty = cfg.infeasible_penalty_seconds;
    if slowest >= penalty || capacity == 0 {
        return Some(penalty);
    }
    let passes = (demand.batch as u64).div_ceil(capacity).max(1);
    Some((slowest * passes as f64).min(penalty))
}

/// `T_balanced = max_z L_z`; a demanded model without active groups is an error.
pub fn plan_makespan(
    plan: &ServingPlan,
    workload: &WorkloadSnapshot,
    catalog: &Catalog,
    cfg: &SimConfig,
) -> Result<Makespan, PlanError> {
    let mut out = Makespan::default();
    for (model, demand) in workload {
        let latency = model_latency(plan, model, demand, catalog, cfg)
            .ok_or_else(|| PlanError::Uncovered(model.clone()))?;
        out.t_balanced = out.t_balanced.max(latency);
        out.per_model.insert(model.clone(), latency);
    }
    Ok(out)
}

/// Like [`plan_makespan`] but charges Λ_∞ to uncovered models instead of failing.
pub fn plan_makespan_penalized(
    plan: &ServingPlan,
    workload: &WorkloadSnapshot,
    catalog: &Catalog,
    cfg: &SimConfig,
) -> Makespan {
    let mut out = Makespan::default();
    for (model, demand) in workload {
        let latency = model_latency(plan, model, demand, catalog, cfg)
            .unwrap_or(cfg.infeasible_penalty_seconds);
        out.t_balanced = out.t_balanced.max(latency);
        out.per_model.insert(model.clone(), latency);
    }
    out
}

/// Drops replicas that no longer have hardware, newest groups first in canonical order.
pub fn clip_to_cluster(plan: &ServingPlan, cluster: &ClusterState) -> ServingPlan {
    let mut groups = plan.groups.clone();
    for (gpu, used) in plan.gpu_usage() {
        let available = cluster.available(&gpu) as u64;
        let mut excess = used.saturating_sub(available);
        for g in groups.iter_mut().rev().filter(|g| g.gpu == gpu) {
            while excess > 0 && g.count > 0 {
                g.count -= 1;
                excess = excess.saturating_sub(g.tp as u64);
            }
        }
    }
    ServingPlan::new(groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn g(model: &str, gpu: &str, tp: u32, batch: u32, count: u32) -> ReplicaGroup {
        ReplicaGroup {
            model: model.into(),
            gpu: gpu.into(),
            tp,
            batch,
            count,
        }
    }

    fn demand(batch: u32) -> ModelWorkload {
        ModelWorkload {
            batch,
            prefill: 256,
            decode: 256,
            cap: 64,
        }
    }

    fn cluster(entries: &[(&str, u32)]) -> ClusterState {
        ClusterState::new(entries.iter().map(|(k, v)| (k.to_string(), *v)))
    }

    #[test]
    fn canonical_form_merges_and_drops_empty() {
        let p = ServingPlan::new(vec![
            g("b", "H100-SXM", 1, 8, 1),
            g("a", "H100-SXM", 1, 8, 0),
            g("b", "H100-SXM", 1, 8, 2),
        ]);
        assert_eq!(p.groups, vec![g("b", "H100-SXM", 1, 8, 3)]);
    }

    #[test]
    fn empty_plan_zero_demand_is_ok() {
        let cat = Catalog::bundled();
        let ctx = Context::cold(WorkloadSnapshot::new(), ClusterState::default());
        assert!(validate(&ServingPlan::empty(), &ctx, &cat, &SimConfig::default()).is_ok());
    }

    #[test]
    fn over_capacity_names_gpu_type() {
        let cat = Catalog::bundled();
        let plan = ServingPlan::new(vec![g("Qwen2.5-1.5B", "H100-SXM", 1, 8, 9)]);
        let ctx = Context::cold(WorkloadSnapshot::new(), cluster(&[("H100-SXM", 8)]));
        let errs = validate(&plan, &ctx, &cat, &SimConfig::default()).unwrap_err();
        assert_eq!(
            errs,
            vec![Violation::Capacity {
                gpu: "H100-SXM".into(),
                used: 9,
                available: 8
            }]
        );
    }

    #[test]
    fn seventy_b_at_tp1_is_infeasible() {
        let cat = Catalog::bundled();
        let plan = ServingPlan::new(vec![g("Llama3.1-70B", "H100-SXM", 1, 8, 1)]);
        let ctx = Context::cold(WorkloadSnapshot::new(), cluster(&[("H100-SXM", 8)]));
        let errs = validate(&plan, &ctx, &cat, &SimConfig::default()).unwrap_err();
        assert!(matches!(errs[0], Violation::Infeasible { .. }));
    }

    #[test]
    fn uncovered_demand_is_reported() {
        let cat = Catalog::bundled();
        let mut w = WorkloadSnapshot::new();
        w.insert("Qwen2.5-3B".into(), demand(4));
        let ctx = Context::cold(w, cluster(&[("H100-SXM", 8)]));
        let errs = validate(&ServingPlan::empty(), &ctx, &cat, &SimConfig::default()).unwrap_err();
        assert_eq!(errs, vec![Violation::Uncovered { model: "Qwen2.5-3B".into() }]);
    }

    #[test]
    fn diff_examples() {
        let a = ServingPlan::new(vec![g("x", "A", 1, 8, 2), g("y", "B", 2, 4, 1)]);
        assert!(plan_diff(&a, &a).is_empty());
        let b = ServingPlan::new(vec![g("x", "A", 1, 8, 3), g("y", "B", 2, 4, 1)]);
        assert_eq!(plan_diff(&a, &b), BTreeSet::from(["x".to_string()]));
        let c = ServingPlan::new(vec![g("x", "A", 1, 16, 2), g("y", "B", 2, 4, 1)]);
        assert_eq!(plan_diff(&a, &c), BTreeSet::from(["x".to_string()]));
        assert_eq!(plan_diff(&c, &a), plan_diff(&a, &c));
    }

    #[test]
    fn single_group_makespan_is_its_latency() {
        let cat = Catalog::bundled();
        let cfg = SimConfig::default();
        let mut w = WorkloadSnapshot::new();
        w.insert("Qwen2.5-7B".into(), demand(32));
        let grp = g("Qwen2.5-7B", "H100-SXM", 2, 16, 2);
        let plan = ServingPlan::new(vec![grp.clone()]);
        let m = plan_makespan(&plan, &w, &cat, &cfg).unwrap();
        assert_eq!(m.t_balanced, group_latency(&grp, &w["Qwen2.5-7B"], &cat, &cfg));
    }

    #[test]
    fn slower_model_sets_makespan() {
        let cat = Catalog::bundled();
        let cfg = SimConfig::default();
        let mut w = WorkloadSnapshot::new();
        w.insert("Qwen2.5-1.5B".into(), demand(8));
        w.insert("Qwen2.5-14B".into(), demand(8));
        let plan = ServingPlan::new(vec![
            g("Qwen2.5-1.5B", "H100-SXM", 1, 8, 1),
            g("Qwen2.5-14B", "A100-80GB", 1, 8, 1),
        ]);
        let m = plan_makespan(&plan, &w, &cat, &cfg).unwrap();
        assert!(m.per_model["Qwen2.5-14B"] > m.per_model["Qwen2.5-1.5B"]);
        assert_eq!(m.t_balanced, m.per_model["Qwen2.5-14B"]);
    }

    #[test]
    fn infeasible_group_dominates() {
        let cat = Catalog::bundled();
        let cfg = SimConfig::default();
        let mut w = WorkloadSnapshot::new();
        w.insert("Llama3.1-70B".into(), demand(8));
        let plan = ServingPlan::new(vec![g("Llama3.1-70B", "H100-SXM", 1, 8, 1)]);
        let m = plan_makespan(&plan, &w, &cat, &cfg).unwrap();
        assert_eq!(m.t_balanced, cfg.infeasible_penalty_seconds);
    }

    #[test]
    fn shortfall_is_charged_as_passes() {
        let cat = Catalog::bundled();
        let cfg = SimConfig::default();
        let mut w = WorkloadSnapshot::new();
        w.insert("Qwen2.5-3B".into(), demand(24));
        let grp = g("Qwen2.5-3B", "H100-SXM", 1, 8, 1);
        let single = group_latency(&grp, &w["Qwen2.5-3B"], &cat, &cfg);
        let m = plan_makespan(&ServingPlan::new(vec![grp]), &w, &cat, &cfg).unwrap();
        assert!((m.t_balanced - 3.0 * single).abs() < 1e-12);
    }

    #[test]
    fn missing_group_is_coverage_error() {
        let cat = Catalog::bundled();
        let mut w = WorkloadSnapshot::new();
        w.insert("Qwen2.5-3B".into(), demand(24));
        assert_eq!(
            plan_makespan(&ServingPlan::empty(), &w, &cat, &SimConfig::default()),
            Err(PlanError::Uncovered("Qwen2.5-3B".into()))
        );
    }

    #[test]
    fn tp_degrees() {
        assert_eq!(valid_tp_degrees(8), vec![1, 2, 4, 8]);
        assert_eq!(valid_tp_degrees(2), vec![1, 2, 4]);
        assert_eq!(valid_tp_degrees(1), vec![1, 2]);
    }

    #[test]
    fn clipping_respects_availability() {
        let plan = ServingPlan::new(vec![g("a", "X", 2, 8, 3), g("b", "X", 1, 8, 2), g("c", "Y", 1, 8, 1)]);
        let clipped = clip_to_cluster(&plan, &cluster(&[("X", 5), ("Y", 1)]));
        assert!(!clipped.exceeds(&cluster(&[("X", 5), ("Y", 1)])));
        assert_eq!(clipped.groups.iter().find(|g| g.model == "c").unwrap().count, 1);
        assert_eq!(clip_to_cluster(&plan, &cluster(&[("X", 8), ("Y", 1)])), plan);
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = ServingPlan::new(vec![g("a", "X", 2, 8, 3)]);
        assert_eq!(ServingPlan::from_json(&plan.to_json()).unwrap(), plan);
    }
}
