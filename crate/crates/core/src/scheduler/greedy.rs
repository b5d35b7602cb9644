//! Fast constructive scheduler.

use super::{objective, uncovered, Candidate, ScheduleOutcome, SchedulingInstance, SearchStatus};
use crate::plan::{ReplicaGroup, ServingPlan};
use crate::timing::Budget;

/// Places replicas for one model's `need` using the fastest option at the largest batch that
/// fits the remaining capacity, falling back to the option covering the most demand.
pub(crate) fn place_model(
    inst: &SchedulingInstance<'_>,
    model: usize,
    mut need: u64,
    remaining: &mut [u32],
    budget: &mut Budget<'_>,
) -> (Vec<ReplicaGroup>, u64) {
    let entry = &inst.models[model];
    let mut groups = Vec::new();
    let Some(&b_star) = entry.batches.last() else {
        return (groups, need);
    };
    let options: Vec<&Candidate> = entry
        .candidates
        .iter()
        .filter(|c| c.batch == b_star)
        .collect();
    let b = b_star as u64;
    while need > 0 {
        budget.tick(options.len() as u64);
        let replicas_needed = need.div_ceil(b);
        let fitting = options
            .iter()
            .find(|c| replicas_needed * c.tp as u64 <= remaining[c.gpu] as u64);
        let chosen = match fitting {
            Some(c) => Some(*c),
            None => options
                .iter()
                .filter(|c| remaining[c.gpu] >= c.tp)
                .max_by(|a, b| {
                    let cov = |c: &Candidate| (remaining[c.gpu] / c.tp) as u64;
                    cov(a).cmp(&cov(b)).then(b.latency.total_cmp(&a.latency))
                })
                .copied(),
        };
        let Some(c) = chosen else {
            break;
        };
        let count = replicas_needed.min((remaining[c.gpu] / c.tp) as u64) as u32;
        remaining[c.gpu] -= count * c.tp;
        need = need.saturating_sub(count as u64 * b);
        groups.push(inst.group(model, c, count));
    }
    (groups, need)
}

/// Devices held back so every model after `model` can still place one replica of its
/// smallest-footprint candidate.
pub(crate) fn reserve_later(inst: &SchedulingInstance<'_>, model: usize, remaining: &[u32]) -> Vec<u32> {
    let mut reserved = vec![0u32; remaining.len()];
    for later in &inst.models[model + 1..] {
        if later.demand.batch == 0 {
            continue;
        }
        let pick = later
            .candidates
            .iter()
            .filter(|c| reserved[c.gpu] + c.tp <= remaining[c.gpu])
            .min_by(|a, b| {
                a.tp.cmp(&b.tp)
                    .then((remaining[b.gpu] - reserved[b.gpu]).cmp(&(remaining[a.gpu] - reserved[a.gpu])))
                    .then(a.gpu.cmp(&b.gpu))
            });
        if let Some(c) = pick {
            reserved[c.gpu] += c.tp;
        }
    }
    reserved
}

/// Deterministic greedy placement, largest model first, holding back one replica's worth of
/// devices for each later model. Never fails; a plan that cannot
/// cover demand is returned with `shortfall` set.
pub fn greedy_schedule(inst: &SchedulingInstance<'_>, budget: &mut Budget<'_>) -> ScheduleOutcome {
    let mut remaining: Vec<u32> = inst.gpus.iter().map(|g| g.available).collect();
    let mut groups = Vec::new();
    for model in 0..inst.models.len() {
        let need = inst.models[model].demand.batch as u64;
        let reserved = reserve_later(inst, model, &remaining);
        let mut usable: Vec<u32> = remaining.iter().zip(&reserved).map(|(r, s)| r - s).collect();
        let (placed, _) = place_model(inst, model, need, &mut usable, budget);
        for (r, (u, s)) in remaining.iter_mut().zip(usable.iter().zip(&reserved)) {
            *r = u + s;
        }
        groups.extend(placed);
    }
    let plan = ServingPlan::new(groups);
    let shortfall = !uncovered(inst, &plan).is_empty();
    ScheduleOutcome {
        objective: objective(inst, &plan),
        plan,
        work: budget.work(),
        seconds: budget.charged(),
        status: SearchStatus::Complete,
        shortfall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::plan::{ClusterState, Context, ModelWorkload, WorkloadSnapshot};
    use crate::scheduler::tests::{small_gpu, small_model};
    use crate::scheduler::{Algorithm, SchedulerConfig};
    use crate::sim::SimConfig;
    use crate::timing::TimerModel;

    fn ctx_for(models: &[(&str, u32)], gpus: &[(&str, u32)], cap: u32) -> Context {
        let workload: WorkloadSnapshot = models
            .iter()
            .map(|(m, b)| {
                (
                    m.to_string(),
                    ModelWorkload {
                        batch: *b,
                        prefill: 128,
                        decode: 128,
                        cap,
                    },
                )
            })
            .collect();
        Context::cold(workload, ClusterState::new(gpus.iter().map(|(g, c)| (g.to_string(), *c))))
    }

    #[test]
    fn single_model_gets_ceil_replicas() {
        let catalog = Catalog::new(vec![small_gpu("g", 64, 1.0)], vec![small_model("m", 4)]).unwrap();
        let sim = SimConfig::default();
        let ctx = ctx_for(&[("m", 100)], &[("g", 64)], 48);
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Greedy);
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let mut budget = Budget::unlimited(TimerModel::default());
        let out = greedy_schedule(&inst, &mut budget);
        assert!(!out.shortfall);
        let b_star = 48;
        let replicas: u32 = out.plan.groups.iter().map(|g| g.count).sum();
        assert!(out.plan.groups.iter().all(|g| g.batch == b_star));
        assert_eq!(replicas, 100u32.div_ceil(b_star));
    }

    #[test]
    fn zero_demand_gives_empty_plan() {
        let catalog = Catalog::new(vec![small_gpu("g", 8, 1.0)], vec![small_model("m", 4)]).unwrap();
        let sim = SimConfig::default();
        let ctx = ctx_for(&[("m", 0)], &[("g", 8)], 8);
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Greedy);
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let out = greedy_schedule(&inst, &mut Budget::unlimited(TimerModel::default()));
        assert!(out.plan.is_empty());
        assert!(!out.shortfall);
    }

    #[test]
    fn undersized_cluster_flags_shortfall() {
        let catalog = Catalog::bundled();
        let sim = SimConfig::default();
        let ctx = ctx_for(&[("Qwen2.5-72B", 64)], &[("A100-80GB", 2)], 64);
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Greedy);
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let out = greedy_schedule(&inst, &mut Budget::unlimited(TimerModel::default()));
        assert!(out.shortfall);
    }

    #[test]
    fn greedy_respects_capacity() {
        let catalog = Catalog::bundled();
        let sim = SimConfig::default();
        let ctx = ctx_for(
            &[("Qwen2.5-72B", 128), ("Qwen2.5-14B", 256), ("Qwen2.5-7B", 512)],
            &[("A100-80GB", 16), ("H100-SXM", 16)],
            64,
        );
        let cfg = SchedulerConfig::for_algorithm(Algorithm::Greedy);
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let out = greedy_schedule(&inst, &mut Budget::unlimited(TimerModel::default()));
        assert!(!out.plan.exceeds(&ctx.cluster));
    }
}
