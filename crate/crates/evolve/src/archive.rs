//! Evaluated candidates and the MAP-Elites grid that keeps the best one per cell.

use crate::descriptor::{feature_descriptor, Cell, GridShape};
use policylab_core::evaluator::EvalReport;
use policylab_core::policy::PolicyGenome;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a candidate's evaluation ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateStatus {
    Evaluated,
    Failed { reason: String },
    TimedOut { after_seconds: f64 },
}

/// A genome together with its evaluation and archive placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub genome: PolicyGenome,
    pub report: Option<EvalReport>,
    pub status: CandidateStatus,
    /// `T_total` for evaluated candidates, infinity otherwise.
    pub fitness: f64,
    pub descriptor: Option<Cell>,
    pub island: usize,
    pub generation: usize,
}

impl Candidate {
    /// Builds a candidate from a finished report.
    pub fn evaluated(genome: PolicyGenome, report: EvalReport, shape: &GridShape, island: usize, generation: usize) -> Self {
        let (status, fitness) = match &report.failure {
            None => (CandidateStatus::Evaluated, report.t_total),
            Some(reason) => (
                CandidateStatus::Failed {
                    reason: reason.clone(),
                },
                f64::INFINITY,
            ),
        };
        let descriptor = feature_descriptor(&report, shape);
        Self {
            genome,
            report: Some(report),
            status,
            fitness,
            descriptor,
            island,
            generation,
        }
    }

    /// Builds a candidate whose evaluation was cut off.
    pub fn timed_out(genome: PolicyGenome, after_seconds: f64, island: usize, generation: usize) -> Self {
        Self {
            genome,
            report: None,
            status: CandidateStatus::TimedOut { after_seconds },
            fitness: f64::INFINITY,
            descriptor: None,
            island,
            generation,
        }
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.status, CandidateStatus::Evaluated)
    }

    /// Orders by fitness, then genome id, so ties break deterministically.
    pub fn better_than(&self, other: &Candidate) -> bool {
        self.fitness < other.fitness || (self.fitness == other.fitness && self.genome.id < other.genome.id)
    }
}

/// Result of offering a candidate to the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    /// The cell was empty.
    Filled,
    /// The candidate replaced a worse occupant.
    Improved,
    /// The occupant is at least as good.
    Rejected,
    /// The candidate has no descriptor (failed or timed out).
    Excluded,
}

impl Insertion {
    /// The archive changed.
    pub fn changed(self) -> bool {
        matches!(self, Insertion::Filled | Insertion::Improved)
    }
}

/// MAP-Elites grid holding at most one candidate per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    shape: GridShape,
    cells: BTreeMap<Cell, Candidate>,
}

impl Archive {
    pub fn new(shape: GridShape) -> Self {
        Self {
            shape,
            cells: BTreeMap::new(),
        }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: &Cell) -> Option<&Candidate> {
        self.cells.get(cell)
    }

    /// Occupied cells in grid order.
    pub fn iter(&self) -> impl Iterator<Item = (&Cell, &Candidate)> {
        self.cells.iter()
    }

    /// Keeps the candidate if its cell is empty or its fitness is strictly lower.
    pub fn insert(&mut self, candidate: Candidate) -> Insertion {
        let Some(cell) = candidate.descriptor else {
            return Insertion::Excluded;
        };
        if !candidate.fitness.is_finite() {
            return Insertion::Excluded;
        }
        match self.cells.get(&cell) {
            None => {
                self.cells.insert(cell, candidate);
                Insertion::Filled
            }
            Some(current) if candidate.fitness < current.fitness => {
                self.cells.insert(cell, candidate);
                Insertion::Improved
            }
            Some(_) => Insertion::Rejected,
        }
    }

    /// Lowest-fitness occupant.
    pub fn best(&self) -> Option<&Candidate> {
        self.cells.values().reduce(|a, b| if b.better_than(a) { b } else { a })
    }

    /// Occupants sorted best first.
    pub fn ranked(&self) -> Vec<&Candidate> {
        let mut v: Vec<&Candidate> = self.cells.values().collect();
        v.sort_by(|a, b| a.fitness.total_cmp(&b.fitness).then_with(|| a.genome.id.cmp(&b.genome.id)));
        v
    }

    /// The best `ceil(ratio · len)` occupants (at least one when non-empty).
    pub fn elites(&self, ratio: f64) -> Vec<&Candidate> {
        let mut ranked = self.ranked();
        let k = ((ratio * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len().max(1));
        ranked.truncate(k);
        ranked
    }

    /// Elite-biased parent choice: with probability `elite_ratio` a uniform pick among the
    /// elites, otherwise a uniform pick over all occupied cells.
    pub fn select_parent<R: Rng>(&self, elite_ratio: f64, rng: &mut R) -> Option<&Candidate> {
        if self.cells.is_empty() {
            return None;
        }
        if rng.gen::<f64>() < elite_ratio {
            let elites = self.elites(elite_ratio);
            Some(elites[rng.gen_range(0..elites.len())])
        } else {
            let i = rng.gen_range(0..self.cells.len());
            self.cells.values().nth(i)
        }
    }

    /// Cell-wise union keeping the better occupant of each cell.
    pub fn merged<'a>(shape: GridShape, parts: impl IntoIterator<Item = &'a Archive>) -> Archive {
        let mut out = Archive::new(shape);
        for part in parts {
            for c in part.cells.values() {
                out.insert(c.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use policylab_core::policy::seed_genomes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cand(n: usize, sched: f64, total: f64) -> Candidate {
        let report = EvalReport {
            genome_id: "g".into(),
            trace_id: "t".into(),
            n,
            intervals: Vec::new(),
            sum_sched: sched,
            sum_stale: 0.0,
            sum_reconfig: 0.0,
            sum_serve: total,
            t_total: total,
            failure: None,
        };
        Candidate::evaluated(seed_genomes()[0].clone(), report, &GridShape::default(), 0, 0)
    }

    #[test]
    fn keeps_strictly_better_occupant() {
        let mut a = Archive::new(GridShape::default());
        assert_eq!(a.insert(cand(1, 0.5, 10.0)), Insertion::Filled);
        assert_eq!(a.insert(cand(1, 0.5, 12.0)), Insertion::Rejected);
        assert_eq!(a.insert(cand(1, 0.5, 10.0)), Insertion::Rejected);
        assert_eq!(a.insert(cand(1, 0.5, 9.0)), Insertion::Improved);
        assert_eq!(a.len(), 1);
        assert_eq!(a.best().unwrap().fitness, 9.0);
    }

    #[test]
    fn failed_candidates_are_excluded() {
        let mut a = Archive::new(GridShape::default());
        let failed = EvalReport::failed("g", "t", "x".into(), 1e9);
        let c = Candidate::evaluated(seed_genomes()[0].clone(), failed, &GridShape::default(), 0, 0);
        assert!(!c.fitness.is_finite());
        assert_eq!(a.insert(c), Insertion::Excluded);
        let t = Candidate::timed_out(seed_genomes()[0].clone(), 1.0, 0, 0);
        assert_eq!(a.insert(t), Insertion::Excluded);
        assert!(a.is_empty());
    }

    #[test]
    fn elites_are_best_fraction() {
        let mut a = Archive::new(GridShape::default());
        for (i, n) in [1usize, 2, 3, 5, 9].iter().enumerate() {
            a.insert(cand(*n, 0.5, 10.0 + i as f64));
        }
        let e = a.elites(0.2);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].fitness, 10.0);
        assert_eq!(a.elites(1.0).len(), 5);
    }

    #[test]
    fn parent_selection_is_seeded() {
        let mut a = Archive::new(GridShape::default());
        for (i, n) in [1usize, 2, 3, 5, 9].iter().enumerate() {
            a.insert(cand(*n, 0.5, 10.0 + i as f64));
        }
        let pick = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| a.select_parent(0.2, &mut rng).unwrap().fitness)
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(7), pick(7));
    }

    #[test]
    fn merge_keeps_best_per_cell() {
        let mut x = Archive::new(GridShape::default());
        let mut y = Archive::new(GridShape::default());
        x.insert(cand(1, 0.5, 10.0));
        y.insert(cand(1, 0.5, 8.0));
        y.insert(cand(9, 0.5, 20.0));
        let m = Archive::merged(GridShape::default(), [&x, &y]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.best().unwrap().fitness, 8.0);
    }
}
