//! Archive invariants and mutation-operator closure.

use policylab_core::evaluator::EvalReport;
use policylab_core::policy::{seed_genomes, PolicyGenome};
use policylab_evolve::archive::{Archive, Candidate, CandidateStatus, Insertion};
use policylab_evolve::descriptor::{Cell, GridShape, N_BUCKETS};
use policylab_evolve::mutate::{apply_operator, mutate_rule_based, Operator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn candidate(genome: &PolicyGenome, fitness: f64, cell: Option<Cell>) -> Candidate {
    Candidate {
        genome: genome.clone(),
        report: Some(EvalReport::from_intervals(&genome.id, "t", Vec::new())),
        status: if fitness.is_finite() {
            CandidateStatus::Evaluated
        } else {
            CandidateStatus::Failed { reason: "x".into() }
        },
        fitness,
        descriptor: cell,
        island: 0,
        generation: 0,
    }
}

/// Inserts `n` random candidates and checks each cell holds the minimum fitness offered to it.
fn check_cell_optimality(seed: u64, n: usize) -> Result<(), String> {
    let shape = GridShape::default();
    let genomes = seed_genomes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = Archive::new(shape);
    let mut best: BTreeMap<Cell, f64> = BTreeMap::new();
    for _ in 0..n {
        let cell = Cell {
            n_bucket: rng.gen_range(0..N_BUCKETS),
            sched_bucket: rng.gen_range(0..shape.sched_buckets),
        };
        let fitness = if rng.gen_bool(0.05) { f64::INFINITY } else { rng.gen_range(0.0..1000.0f64).round() };
        let descriptor = if rng.gen_bool(0.05) { None } else { Some(cell) };
        let g = &genomes[rng.gen_range(0..genomes.len())];
        let before = archive.get(&cell).map(|c| c.fitness);
        let outcome = archive.insert(candidate(g, fitness, descriptor));
        match (descriptor, fitness.is_finite()) {
            (Some(c), true) => {
                let slot = best.entry(c).or_insert(f64::INFINITY);
                let expect = if before.is_none() {
                    Insertion::Filled
                } else if fitness < *slot {
                    Insertion::Improved
                } else {
                    Insertion::Rejected
                };
                if outcome != expect {
                    return Err(format!("{outcome:?} != {expect:?} for fitness {fitness} in {c}"));
                }
                *slot = slot.min(fitness);
            }
            _ => {
                if outcome != Insertion::Excluded {
                    return Err(format!("undescribed or failed candidate gave {outcome:?}"));
                }
            }
        }
        for (c, f) in &best {
            if archive.get(c).map(|o| o.fitness) != Some(*f) {
                return Err(format!("cell {c} lost its optimum {f}"));
            }
        }
        if archive.len() != best.len() {
            return Err(format!("{} cells occupied, {} expected", archive.len(), best.len()));
        }
    }
    Ok(())
}

#[test]
fn cell_optimality_over_ten_thousand_insertions() {
    check_cell_optimality(7, 10_000).unwrap();
}

#[test]
fn best_and_ranking_agree_with_cells() {
    let genomes = seed_genomes();
    let mut archive = Archive::new(GridShape::default());
    for (i, g) in genomes.iter().enumerate() {
        archive.insert(candidate(g, 10.0 - i as f64, Some(Cell { n_bucket: i % N_BUCKETS, sched_bucket: i })));
    }
    let ranked = archive.ranked();
    assert!(ranked.windows(2).all(|p| p[0].fitness <= p[1].fitness));
    assert_eq!(archive.best().unwrap().fitness, ranked[0].fitness);
    assert_eq!(archive.elites(0.2).len(), 2);
    let merged = Archive::merged(GridShape::default(), [&archive, &archive]);
    assert_eq!(merged, archive);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn archive_keeps_cell_minima(seed in any::<u64>()) {
        prop_assert!(check_cell_optimality(seed, 300).is_ok());
    }

    #[test]
    fn operators_produce_valid_genomes(seed in any::<u64>(), chain in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for parent in seed_genomes() {
            let mut g = parent.clone();
            for _ in 0..chain {
                let applicable: Vec<Operator> = Operator::ALL.iter().copied().filter(|op| op.applies_to(&g)).collect();
                prop_assert!(!applicable.is_empty());
                let op = applicable[rng.gen_range(0..applicable.len())];
                let child = apply_operator(op, &g, &mut rng);
                prop_assert!(child.validate().is_ok(), "{} from {}: {:?}", op.name(), g.summary(), child.validate());
                prop_assert_eq!(&child.id, &child.content_id());
                prop_assert_eq!(PolicyGenome::from_text(&child.to_canonical()).unwrap(), child.clone());
                g = child;
            }
            let child = mutate_rule_based(&parent, &[], &mut rng);
            prop_assert!(child.validate().is_ok());
            prop_assert_ne!(child.id, parent.id);
        }
    }
}
