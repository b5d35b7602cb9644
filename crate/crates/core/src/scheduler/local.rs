//! Best-improvement hill climbing over single-group moves.

use super::{objective, Objective, ScheduleOutcome, SchedulingInstance, SearchStatus};
use crate::plan::{ReplicaGroup, ServingPlan};
use crate::timing::Budget;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn neighbors(inst: &SchedulingInstance<'_>, plan: &ServingPlan) -> Vec<ServingPlan> {
    let mut free: Vec<i64> = inst.gpus.iter().map(|g| g.available as i64).collect();
    let gpu_index = |name: &str| inst.gpus.iter().position(|g| g.name == name);
    for g in &plan.groups {
        if let Some(i) = gpu_index(&g.gpu) {
            free[i] -= g.gpus_used() as i64;
        }
    }
    let mut out = Vec::new();
    let with = |idx: usize, replacement: Option<ReplicaGroup>| {
        let mut groups = plan.groups.clone();
        match replacement {
            Some(r) => groups[idx] = r,
            None => {
                groups.remove(idx);
            }
        }
        ServingPlan::new(groups)
    };
    for (idx, g) in plan.groups.iter().enumerate() {
        let Some(gi) = gpu_index(&g.gpu) else {
            out.push(with(idx, None));
            continue;
        };
        let model = inst.models.iter().find(|m| m.name == g.model);
        if free[gi] >= g.tp as i64 {
            out.push(with(idx, Some(ReplicaGroup { count: g.count + 1, ..g.clone() })));
        }
        out.push(with(idx, Some(ReplicaGroup { count: g.count - 1, ..g.clone() })));
        let Some(model) = model else {
            continue;
        };
        for &b in &model.batches {
            if b != g.batch {
                out.push(with(idx, Some(ReplicaGroup { batch: b, ..g.clone() })));
            }
        }
        let placements: BTreeSet<(usize, u32)> =
            model.candidates.iter().map(|c| (c.gpu, c.tp)).collect();
        for (target_gpu, tp) in placements {
            let target = &inst.gpus[target_gpu].name;
            let same_gpu = *target == g.gpu;
            // change t in place, or move to another GPU type at the same t
            if same_gpu == (tp == g.tp) {
                continue;
            }
            let needed = tp as i64 * g.count as i64;
            let available = if same_gpu {
                free[target_gpu] + g.gpus_used() as i64
            } else {
                free[target_gpu]
            };
            if needed <= available {
                out.push(with(
                    idx,
                    Some(ReplicaGroup {
                        gpu: target.clone(),
                        tp,
                        ..g.clone()
                    }),
                ));
            }
        }
    }
    for (mi, _) in super::uncovered(inst, plan) {
        for c in &inst.models[mi].candidates {
            if free[c.gpu] >= c.tp as i64 {
                let mut groups = plan.groups.clone();
                groups.push(inst.group(mi, c, 1));
                out.push(ServingPlan::new(groups));
            }
        }
    }
    out.retain(|p| p != plan);
    out
}

/// Hill climbing from `seed`, accepting only strict improvements of the shared objective.
pub fn local_search_schedule(
    inst: &SchedulingInstance<'_>,
    seed: &ServingPlan,
    budget: &mut Budget<'_>,
) -> ScheduleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(inst.config.seed);
    let mut current = seed.clone();
    let mut current_obj: Objective = objective(inst, &current);
    let status = loop {
        if let Some(reason) = budget.exhausted() {
            break SearchStatus::Stopped(reason);
        }
        let mut moves = neighbors(inst, &current);
        moves.shuffle(&mut rng);
        let mut best: Option<(ServingPlan, Objective)> = None;
        let mut stopped = None;
        for candidate in moves {
            if let Some(reason) = budget.exhausted() {
                stopped = Some(reason);
                break;
            }
            budget.tick(1);
            let value = objective(inst, &candidate);
            let bar = best.as_ref().map(|(_, o)| o.total).unwrap_or(current_obj.total);
            if value.total < bar {
                best = Some((candidate, value));
            }
        }
        match best {
            Some((plan, value)) => {
                current = plan;
                current_obj = value;
            }
            None => {
                break match stopped {
                    Some(reason) => SearchStatus::Stopped(reason),
                    None => SearchStatus::LocalOptimum,
                }
            }
        }
        if let Some(reason) = stopped {
            break SearchStatus::Stopped(reason);
        }
    };
    let shortfall = !super::uncovered(inst, &current).is_empty();
    ScheduleOutcome {
        plan: current,
        objective: current_obj,
        work: budget.work(),
        seconds: budget.charged(),
        status,
        shortfall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::plan::{ClusterState, Context, ModelWorkload, WorkloadSnapshot};
    use crate::scheduler::tests::{small_gpu, small_model};
    use crate::scheduler::{exact_schedule, greedy_schedule, Algorithm, SchedulerConfig};
    use crate::sim::SimConfig;
    use crate::timing::TimerModel;

    fn setup() -> (Catalog, SimConfig, Context) {
        let catalog = Catalog::new(
            vec![small_gpu("fast", 4, 2.0), small_gpu("slow", 4, 1.0)],
            vec![small_model("a", 4), small_model("b", 12)],
        )
        .unwrap();
        let mut workload = WorkloadSnapshot::new();
        workload.insert("a".into(), ModelWorkload { batch: 6, prefill: 256, decode: 256, cap: 3 });
        workload.insert("b".into(), ModelWorkload { batch: 5, prefill: 256, decode: 512, cap: 3 });
        let ctx = Context::cold(
            workload,
            ClusterState::new([("fast".to_string(), 4), ("slow".to_string(), 4)]),
        );
        (catalog, SimConfig::default(), ctx)
    }

    fn config() -> SchedulerConfig {
        let mut cfg = SchedulerConfig::for_algorithm(Algorithm::LocalSearch);
        cfg.batch_candidate_policy = crate::scheduler::BatchCandidatePolicy::ExhaustiveUpToCap;
        cfg.relative_gap = 0.0;
        cfg
    }

    #[test]
    fn improves_on_greedy() {
        let (catalog, sim, ctx) = setup();
        let cfg = config();
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let greedy = greedy_schedule(&inst, &mut Budget::unlimited(TimerModel::default()));
        let out = local_search_schedule(&inst, &greedy.plan, &mut Budget::unlimited(TimerModel::default()));
        assert!(out.objective.total <= greedy.objective.total);
        assert_eq!(out.status, SearchStatus::LocalOptimum);
    }

    #[test]
    fn exact_optimum_is_a_fixed_point() {
        let (catalog, sim, ctx) = setup();
        let cfg = config();
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let best = exact_schedule(&inst, &mut Budget::unlimited(TimerModel::default())).unwrap();
        let out = local_search_schedule(&inst, &best.plan, &mut Budget::unlimited(TimerModel::default()));
        assert_eq!(out.plan, best.plan);
    }

    #[test]
    fn zero_budget_returns_seed() {
        let (catalog, sim, ctx) = setup();
        let cfg = config();
        let inst = SchedulingInstance::new(&catalog, &sim, &ctx, &cfg, 0.0).unwrap();
        let seed = ServingPlan::empty();
        let out = local_search_schedule(&inst, &seed, &mut Budget::new(TimerModel::default(), 0.0));
        assert_eq!(out.plan, seed);
    }
}
