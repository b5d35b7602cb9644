//! Depth-first branch-and-bound over replica counts.
//!
//! Models are decided one at a time, largest first. Within a model, candidates are sorted by
//! latency and activated in increasing index order, so the model's completion latency is the
//! latency of the last activated candidate. Coverage is a hard constraint.

use super::greedy::reserve_later;
use super::{
    greedy_schedule, objective, Candidate, uncovered, Objective, ScheduleError, ScheduleOutcome,
    SchedulingInstance, SearchStatus,
};
use crate::plan::{clip_to_cluster, footprint, ServingPlan};
use crate::sim::transfer_time;
use crate::timing::{Budget, StopReason};
use std::collections::BTreeMap;

type Footprint = BTreeMap<(String, u32), u64>;

struct Search<'i, 'a, 'b, 'c> {
    inst: &'i SchedulingInstance<'a>,
    budget: &'b mut Budget<'c>,
    remaining: Vec<u32>,
    chosen: Vec<(usize, usize, u32)>,
    best: Option<(ServingPlan, Objective)>,
    stop: Option<StopReason>,
    gap: f64,
    allow_extra: bool,
    pruned_by_gap: bool,
    deployed: BTreeMap<String, Footprint>,
    fixed_term: f64,
}

struct Node {
    model: usize,
    next: usize,
    covered: u64,
    latency: f64,
    t_done: f64,
    weighted_done: f64,
    term_done: f64,
    load_done: f64,
}

impl<'i, 'a, 'b, 'c> Search<'i, 'a, 'b, 'c> {
    fn best_total(&self) -> f64 {
        self.best.as_ref().map(|(_, o)| o.total).unwrap_or(f64::INFINITY)
    }

    /// Smallest latency at which candidates from `from` onward could cover `need` within the
    /// remaining capacity, relaxing every GPU type to its best batch-per-device ratio.
    fn cover_threshold(&self, model: usize, from: usize, need: u64) -> Option<f64> {
        if need == 0 {
            return Some(0.0);
        }
        let mut ratio = vec![0.0f64; self.remaining.len()];
        let mut reach = 0.0;
        for c in &self.inst.models[model].candidates[from..] {
            let free = self.remaining[c.gpu];
            if free < c.tp {
                continue;
            }
            let r = c.batch as f64 / c.tp as f64;
            if r > ratio[c.gpu] {
                reach += free as f64 * (r - ratio[c.gpu]);
                ratio[c.gpu] = r;
                if reach + 1e-9 >= need as f64 {
                    return Some(c.latency);
                }
            }
        }
        None
    }

    /// Relaxed device count needed to cover the remaining demand of `model` (from candidate
    /// `from`) and every later model using only candidates faster than `limit`, pooling all types.
    fn pooled_devices(&self, model: usize, from: usize, need: u64, limit: f64) -> f64 {
        let mut total = 0.0;
        for k in model..self.inst.models.len() {
            let (start, demand) = if k == model {
                (from, need)
            } else {
                (0, self.inst.models[k].demand.batch as u64)
            };
            if demand == 0 {
                continue;
            }
            let ratio = self.inst.models[k].candidates[start..]
                .iter()
                .take_while(|c| c.latency < limit)
                .filter(|c| self.remaining[c.gpu] >= c.tp)
                .map(|c| c.batch as f64 / c.tp as f64)
                .fold(0.0, f64::max);
            if ratio == 0.0 {
                return f64::INFINITY;
            }
            total += demand as f64 / ratio;
        }
        total
    }

    fn reconfig_lb(&self, term: f64, load: f64) -> f64 {
        if self.inst.migration_weight > 0.0 && self.inst.ctx.deployed.is_some() {
            self.inst.migration_weight * (term.max(self.fixed_term) + load)
        } else {
            0.0
        }
    }

    fn leaf(&mut self) {
        let groups = self
            .chosen
            .iter()
            .map(|&(m, c, n)| self.inst.group(m, &self.inst.models[m].candidates[c], n))
            .collect();
        let plan = ServingPlan::new(groups);
        let value = objective(self.inst, &plan);
        if value.total < self.best_total() {
            self.best = Some((plan, value));
        }
    }

    /// Termination and load contributions of closing `model` with its chosen groups.
    fn close_costs(&self, model: usize) -> (f64, f64) {
        if self.inst.migration_weight <= 0.0 || self.inst.ctx.deployed.is_none() {
            return (0.0, 0.0);
        }
        let entry = &self.inst.models[model];
        let mut now = Footprint::new();
        for &(m, c, n) in &self.chosen {
            if m == model {
                let cand = &entry.candidates[c];
                *now.entry((self.inst.gpus[cand.gpu].name.clone(), cand.tp))
                    .or_default() += n as u64;
            }
        }
        let before = self.deployed.get(&entry.name).cloned().unwrap_or_default();
        if before == now {
            return (0.0, 0.0);
        }
        let spec = self.inst.catalog.model(&entry.name).expect("instance models exist");
        let tau = |fp: &Footprint| {
            fp.keys()
                .filter_map(|(g, _)| self.inst.catalog.gpu(g))
                .map(|g| transfer_time(spec, g))
                .fold(0.0, f64::max)
        };
        (tau(&before), tau(&now))
    }

    fn dfs(&mut self, node: Node) {
        if self.stop.is_some() {
            return;
        }
        self.budget.tick(1);
        if let Some(reason) = self.budget.exhausted() {
            self.stop = Some(reason);
            return;
        }
        let inst = self.inst;
        let n_models = inst.models.len();
        if node.model == n_models {
            self.leaf();
            return;
        }
        let entry = &inst.models[node.model];
        let need = (entry.demand.batch as u64).saturating_sub(node.covered);

        let Some(mut lb_cur) = self.cover_threshold(node.model, node.next, need) else {
            return;
        };
        lb_cur = lb_cur.max(node.latency);
        let mut future_max: f64 = 0.0;
        let mut future_weighted = 0.0;
        for k in node.model + 1..n_models {
            let Some(lb) = self.cover_threshold(k, 0, inst.models[k].demand.batch as u64) else {
                return;
            };
            future_max = future_max.max(lb);
            future_weighted += inst.models[k].secondary_weight * lb;
        }
        let reconfig = self.reconfig_lb(node.term_done, node.load_done);
        let bound_with = |current: f64| {
            node.t_done.max(current).max(future_max)
                + inst.epsilon * (node.weighted_done + entry.secondary_weight * current + future_weighted)
                + reconfig
        };
        let bar = self.best_total();
        let threshold = bar * (1.0 - self.gap);
        let lb = bound_with(lb_cur);
        if lb >= threshold {
            if lb < bar {
                self.pruned_by_gap = true;
            }
            return;
        }
        if threshold.is_finite() {
            let free: u32 = self.remaining.iter().sum();
            if self.pooled_devices(node.model, node.next, need, threshold) > free as f64 + 1e-9 {
                return;
            }
        }

        if need == 0 {
            let (term, load) = self.close_costs(node.model);
            self.dfs(Node {
                model: node.model + 1,
                next: 0,
                covered: 0,
                latency: 0.0,
                t_done: node.t_done.max(node.latency),
                weighted_done: node.weighted_done + entry.secondary_weight * node.latency,
                term_done: node.term_done.max(term),
                load_done: node.load_done.max(load),
            });
            if !self.allow_extra {
                return;
            }
        }

        for j in node.next..entry.candidates.len() {
            if self.stop.is_some() {
                return;
            }
            let cand = &entry.candidates[j];
            let latency = node.latency.max(cand.latency);
            let bar = self.best_total();
            let partial = bound_with(latency);
            if partial >= bar * (1.0 - self.gap) {
                if partial < bar {
                    self.pruned_by_gap = true;
                }
                break;
            }
            let mut max_n = cand.effective_bound.min(self.remaining[cand.gpu] / cand.tp);
            if !self.allow_extra {
                max_n = max_n.min(need.div_ceil(cand.batch as u64) as u32);
            }
            for n in (1..=max_n).rev() {
                self.remaining[cand.gpu] -= n * cand.tp;
                self.chosen.push((node.model, j, n));
                self.dfs(Node {
                    model: node.model,
                    next: j + 1,
                    covered: node.covered + n as u64 * cand.batch as u64,
                    latency,
                    t_done: node.t_done,
                    weighted_done: node.weighted_done,
                    term_done: node.term_done,
                    load_done: node.load_done,
                });
                self.chosen.pop();
                self.remaining[cand.gpu] += n * cand.tp;
                if self.stop.is_some() {
                    return;
                }
            }
        }
    }
}

fn infeasibility_reasons(inst: &SchedulingInstance<'_>) -> Vec<String> {
    let mut reasons = Vec::new();
    let mut capacity_ok = true;
    for m in &inst.models {
        if m.candidates.is_empty() {
            reasons.push(format!(
                "model `{}`: no memory-feasible (gpu, tp) placement on the available GPUs under the tp floor rules",
                m.name
            ));
            capacity_ok = false;
            continue;
        }
        let mut best_ratio: BTreeMap<usize, f64> = BTreeMap::new();
        for c in &m.candidates {
            let r = c.batch as f64 / c.tp as f64;
            let e = best_ratio.entry(c.gpu).or_insert(0.0);
            *e = e.max(r);
        }
        let reach: f64 = best_ratio
            .iter()
            .map(|(g, r)| inst.gpus[*g].available as f64 * r)
            .sum();
        if reach + 1e-9 < m.demand.batch as f64 {
            reasons.push(format!(
                "model `{}`: demand {} exceeds what all available GPUs can hold ({:.0})",
                m.name, m.demand.batch, reach
            ));
            capacity_ok = false;
        }
    }
    if capacity_ok {
        reasons.push("capacity: available GPUs cannot cover every model's demand simultaneously".into());
    }
    reasons
}

/// Covers every model using only candidates no slower than `limit`, largest model first,
/// spending the fewest devices per step. Returns `None` when some demand stays uncovered.
fn cover_within(inst: &SchedulingInstance<'_>, limit: f64, budget: &mut Budget<'_>) -> Option<ServingPlan> {
    let mut remaining: Vec<u32> = inst.gpus.iter().map(|g| g.available).collect();
    let mut groups = Vec::new();
    for (m, entry) in inst.models.iter().enumerate() {
        let mut need = entry.demand.batch as u64;
        let reserved = reserve_later(inst, m, &remaining);
        let fast: Vec<&Candidate> = entry.candidates.iter().take_while(|c| c.latency <= limit).collect();
        while need > 0 {
            budget.tick(fast.len() as u64);
            let usable = |c: &Candidate| remaining[c.gpu].saturating_sub(reserved[c.gpu]);
            let whole = fast
                .iter()
                .filter(|c| need.div_ceil(c.batch as u64) * c.tp as u64 <= usable(c) as u64)
                .min_by(|a, b| {
                    let cost = |c: &Candidate| need.div_ceil(c.batch as u64) * c.tp as u64;
                    cost(a).cmp(&cost(b)).then(a.latency.total_cmp(&b.latency))
                });
            let pick = whole.or_else(|| {
                fast.iter().filter(|c| usable(c) >= c.tp).max_by(|a, b| {
                    let ratio = |c: &Candidate| c.batch as f64 / c.tp as f64;
                    ratio(a).total_cmp(&ratio(b)).then(b.latency.total_cmp(&a.latency))
                })
            })?;
            let count = need.div_ceil(pick.batch as u64).min((usable(pick) / pick.tp) as u64) as u32;
            remaining[pick.gpu] -= count * pick.tp;
            need = need.saturating_sub(count as u64 * pick.batch as u64);
            groups.push(inst.group(m, pick, count));
        }
    }
    Some(ServingPlan::new(groups))
}

/// Bisects over candidate latencies for the tightest limit [`cover_within`] can meet.
fn threshold_incumbent(inst: &SchedulingInstance<'_>, budget: &mut Budget<'_>) -> Option<(ServingPlan, Objective)> {
    let mut limits: Vec<f64> = inst
        .models
        .iter()
        .flat_map(|m| m.candidates.iter().map(|c| c.latency))
        .collect();
    limits.sort_by(f64::total_cmp);
    limits.dedup();
    let (mut lo, mut hi) = (0usize, limits.len());
    let mut best: Option<(ServingPlan, Objective)> = None;
    while lo < hi {
        let mid = (lo + hi) / 2;
        match cover_within(inst, limits[mid], budget) {
            Some(plan) => {
                let value = objective(inst, &plan);
                if best.as_ref().is_none_or(|(_, o)| value.total < o.total) {
                    best = Some((plan, value));
                }
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    best
}

/// Branch-and-bound minimizing the shared objective with coverage as a hard constraint.
///
/// Stops at proven optimality, at the relative gap, or when the budget runs out (returning
/// the incumbent).
pub fn exact_schedule(
    inst: &SchedulingInstance<'_>,
    budget: &mut Budget<'_>,
) -> Result<ScheduleOutcome, ScheduleError> {
    if inst.models.iter().any(|m| m.candidates.is_empty()) {
        return Err(ScheduleError::Infeasible {
            reasons: infeasibility_reasons(inst),
        });
    }
    let allow_extra = inst.migration_weight > 0.0 && inst.ctx.deployed.is_some();
    let deployed: BTreeMap<String, Footprint> = inst
        .ctx
        .deployed_plan()
        .map(footprint)
        .unwrap_or_default();
    let fixed_term = if allow_extra {
        deployed
            .iter()
            .filter(|(name, _)| !inst.models.iter().any(|m| &m.name == *name))
            .filter_map(|(name, fp)| {
                let spec = inst.catalog.model(name)?;
                fp.keys()
                    .filter_map(|(g, _)| inst.catalog.gpu(g))
                    .map(|g| transfer_time(spec, g))
                    .reduce(f64::max)
            })
            .fold(0.0, f64::max)
    } else {
        0.0
    };

    let mut best = None;
    let greedy = greedy_schedule(inst, budget);
    if !greedy.shortfall {
        best = Some((greedy.plan, greedy.objective));
    }
    if let Some((plan, value)) = threshold_incumbent(inst, budget) {
        if best.as_ref().is_none_or(|(_, o): &(ServingPlan, Objective)| value.total < o.total) {
            best = Some((plan, value));
        }
    }
    if allow_extra {
        if let Some(prev) = inst.ctx.deployed_plan() {
            let kept = ServingPlan::new(
                clip_to_cluster(prev, &inst.ctx.cluster)
                    .groups
                    .into_iter()
                    .filter(|g| inst.models.iter().any(|m| m.name == g.model))
                    .collect(),
            );
            if kept.groups.iter().all(|g| inst.admissible(g)) && uncovered(inst, &kept).is_empty() {
                let value = objective(inst, &kept);
                if best.as_ref().is_none_or(|(_, o): &(ServingPlan, Objective)| value.total < o.total) {
                    best = Some((kept, value));
                }
            }
        }
    }

    let mut search = Search {
        inst,
        remaining: inst.gpus.iter().map(|g| g.available).collect(),
        budget,
        chosen: Vec::new(),
        best,
        stop: None,
        gap: inst.config.relative_gap,
        allow_extra,
        pruned_by_gap: false,
        deployed,
        fixed_term,
    };
    search.dfs(Node {
        model: 0,
        next: 0,
        covered: 0,
        latency: 0.0,
        t_done: 0.0,
        weighted_done: 0.0,
        term_done: 0.0,
        load_done: 0.0,
    });
    let status = match (search.stop, search.pruned_by_gap) {
        (Some(reason), _) => SearchStatus::Stopped(reason),
        (None, true) => SearchStatus::WithinGap,
        (None, false) => SearchStatus::Optimal,
    };
    let stop = search.stop;
    match search.best {
        Some((plan, value)) => Ok(ScheduleOutcome {
            plan,
            objective: value,
            work: search.budget.work(),
            seconds: search.budget.charged(),
            status,
            shortfall: false,
        }),
        None => match stop {
            Some(reason) => Err(ScheduleError::NoIncumbent { reason }),
            None => Err(ScheduleError::Infeasible {
                reasons: infeasibility_reasons(inst),
            }),
        },
    }
}
