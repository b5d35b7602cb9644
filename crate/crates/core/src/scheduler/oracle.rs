//! Exhaustive enumeration for small instances, used as the test reference.

use super::{objective, Objective, ScheduleError, ScheduleOutcome, SchedulingInstance, SearchStatus};
use crate::plan::ServingPlan;

/// Maximum number of capacity-feasible assignments the oracle will enumerate.
pub const ORACLE_LIMIT: u64 = 10_000_000;

/// Per-variable upper bound used during enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// The per-variable bound M (widened to deployed counts under a migration penalty).
    Tight,
    /// The global bound `max_g κ_g`.
    Loose,
}

struct Var {
    model: usize,
    cand: usize,
    gpu: usize,
    tp: u32,
    batch: u64,
    bound: u32,
}

struct Enumerator<'i, 'a> {
    inst: &'i SchedulingInstance<'a>,
    vars: Vec<Var>,
    remaining: Vec<u32>,
    counts: Vec<u32>,
    best: Option<(ServingPlan, Objective)>,
    visited: u64,
}

impl Enumerator<'_, '_> {
    fn count(&mut self, idx: usize, limit: u64) -> bool {
        if idx == self.vars.len() {
            self.visited += 1;
            return self.visited <= limit;
        }
        let (gpu, tp, bound) = (self.vars[idx].gpu, self.vars[idx].tp, self.vars[idx].bound);
        let max_n = bound.min(self.remaining[gpu] / tp);
        for n in 0..=max_n {
            self.remaining[gpu] -= n * tp;
            let ok = self.count(idx + 1, limit);
            self.remaining[gpu] += n * tp;
            if !ok {
                return false;
            }
        }
        true
    }

    fn search(&mut self, idx: usize) {
        if idx == self.vars.len() {
            self.evaluate();
            return;
        }
        let (gpu, tp, bound) = (self.vars[idx].gpu, self.vars[idx].tp, self.vars[idx].bound);
        let max_n = bound.min(self.remaining[gpu] / tp);
        for n in 0..=max_n {
            self.remaining[gpu] -= n * tp;
            self.counts[idx] = n;
            self.search(idx + 1);
            self.remaining[gpu] += n * tp;
        }
        self.counts[idx] = 0;
    }

    fn evaluate(&mut self) {
        let mut covered = vec![0u64; self.inst.models.len()];
        for (v, &n) in self.vars.iter().zip(&self.counts) {
            covered[v.model] += v.batch * n as u64;
        }
        let all_covered = self
            .inst
            .models
            .iter()
            .zip(&covered)
            .all(|(m, &c)| c >= m.demand.batch as u64);
        if !all_covered {
            return;
        }
        let groups = self
            .vars
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n > 0)
            .map(|(v, &n)| self.inst.group(v.model, &self.inst.models[v.model].candidates[v.cand], n))
            .collect();
        let plan = ServingPlan::new(groups);
        let value = objective(self.inst, &plan);
        if self.best.as_ref().is_none_or(|(_, o)| value.total < o.total) {
            self.best = Some((plan, value));
        }
    }
}

/// Enumerates every capacity-feasible count vector and returns the true optimum of the
/// shared objective under hard coverage. Refuses instances above [`ORACLE_LIMIT`].
pub fn brute_force_oracle(
    inst: &SchedulingInstance<'_>,
    mode: BoundMode,
) -> Result<ScheduleOutcome, ScheduleError> {
    let loose = inst.gpus.iter().map(|g| g.available).max().unwrap_or(0);
    let mut vars = Vec::new();
    for (mi, m) in inst.models.iter().enumerate() {
        for (ci, c) in m.candidates.iter().enumerate() {
            vars.push(Var {
                model: mi,
                cand: ci,
                gpu: c.gpu,
                tp: c.tp,
                batch: c.batch as u64,
                bound: match mode {
                    BoundMode::Tight => c.effective_bound,
                    BoundMode::Loose => loose,
                },
            });
        }
    }
    let mut e = Enumerator {
        inst,
        counts: vec![0; vars.len()],
        vars,
        remaining: inst.gpus.iter().map(|g| g.available).collect(),
        best: None,
        visited: 0,
    };
    if !e.count(0, ORACLE_LIMIT) {
        return Err(ScheduleError::SearchSpaceTooLarge {
            size: e.visited,
            limit: ORACLE_LIMIT,
        });
    }
    let space = e.visited;
    e.search(0);
    match e.best {
        Some((plan, value)) => Ok(ScheduleOutcome {
            plan,
            objective: value,
            work: space,
            seconds: 0.0,
            status: SearchStatus::Optimal,
            shortfall: false,
        }),
        None => Err(ScheduleError::Infeasible {
            reasons: vec!["no enumerated assignment covers every model's demand".into()],
        }),
    }
}
