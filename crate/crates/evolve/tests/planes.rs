//! Two-plane runtime: replay equivalence, swap atomicity and staging behavior.

use policylab_core::catalog::Catalog;
use policylab_core::evaluator::{replay, ReplayConfig};
use policylab_core::plan::{ClusterState, ModelWorkload};
use policylab_core::policy::{seed_by_name, seed_genomes, PolicyGenome};
use policylab_core::traces::{bundled_trace, bundled_traces, generate_phase_trace, GeneratorSpec, PhaseSpec, Trace};
use policylab_evolve::engine::{evolve_cycle, EvolveConfig};
use policylab_evolve::planes::{
    data_plane_run, run_two_planes, ControlConfig, DataPlane, RunMode, SnapshotBuffer, StagingSlot, TwoPlaneConfig,
};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

#[test]
fn data_plane_alone_is_a_replay() {
    let catalog = Catalog::bundled();
    let rc = ReplayConfig::default();
    for trace in bundled_traces() {
        for g in seed_genomes() {
            if trace.id.starts_with("maf") && g.summary().starts_with("exact") {
                continue;
            }
            let buffer = SnapshotBuffer::new(64, 5, &trace.id).unwrap();
            let log = data_plane_run(&trace, g.clone(), &catalog, rc, &buffer, &StagingSlot::new());
            let expected = replay(&g, &trace, &catalog, &rc).unwrap();
            assert_eq!(log.report, expected, "{} on {}", g.summary(), trace.id);
            assert_eq!(log.steps.len(), trace.len());
            assert!(log.swaps.is_empty());
        }
    }
}

fn phase(label: &str, batch: u32, prefill: u32, decode: u32, seconds: f64) -> PhaseSpec {
    PhaseSpec {
        label: label.into(),
        workloads: [(
            "Qwen2.5-7B".to_string(),
            ModelWorkload {
                batch,
                prefill,
                decode,
                cap: 64,
            },
        )]
        .into_iter()
        .collect(),
        cluster: ClusterState::new([("H100-SXM".to_string(), 8)]),
        duration_seconds: seconds,
    }
}

fn long_trace(records: usize) -> Trace {
    generate_phase_trace(&GeneratorSpec {
        id: "stress".into(),
        phases: vec![phase("steady", 128, 512, 128, records as f64)],
        step_seconds: 1.0,
        jitter: 0.2,
        seed: 3,
    })
}

#[test]
fn a_thousand_concurrent_swaps_leave_no_torn_step() {
    let catalog = Catalog::bundled();
    let rc = ReplayConfig::default();
    let trace = long_trace(1500);
    let pool: Vec<PolicyGenome> = ["greedy-periodic-full", "greedy-never-full", "greedy-never-minimal", "localsearch-delta-minimal"]
        .iter()
        .map(|n| seed_by_name(n).unwrap())
        .collect();
    let slot = StagingSlot::new();
    let buffer = SnapshotBuffer::new(64, 5, "stress").unwrap();
    let done = AtomicBool::new(false);
    let (staged, log) = std::thread::scope(|s| {
        let stager = s.spawn(|| {
            let mut issued = BTreeMap::new();
            for i in 0..1000 {
                let g = pool[i % pool.len()].clone();
                let id = g.id.clone();
                let generation = slot.stage(g, 0.0, i);
                issued.insert(generation, id);
                if i % 4 == 0 {
                    std::thread::yield_now();
                }
            }
            done.store(true, Ordering::SeqCst);
            issued
        });
        let mut plane = DataPlane::new(pool[0].clone(), &catalog, rc, "stress");
        let mut step = 0;
        while step < trace.len() {
            plane.step(step, &trace.records[step], &buffer, &slot);
            step += 1;
            if step == trace.len() - 1 && !done.load(Ordering::SeqCst) {
                while !done.load(Ordering::SeqCst) {
                    std::thread::yield_now();
                }
            }
        }
        (stager.join().unwrap(), plane.finish())
    });
    assert_eq!(staged.len(), 1000);
    assert_eq!(*staged.keys().last().unwrap(), 1000);
    let mut last = 0;
    for s in &log.steps {
        assert!(s.generation >= last, "generation went back at step {}", s.step);
        last = s.generation;
        let want = if s.generation == 0 { &pool[0].id } else { &staged[&s.generation] };
        assert_eq!(&s.genome_id, want, "torn step {}", s.step);
        assert!(s.error.is_none());
    }
    for w in &log.swaps {
        assert_eq!(staged[&w.generation], w.genome_id);
        assert_eq!(log.steps[w.step].generation, w.generation);
        assert!(w.step == 0 || log.steps[w.step - 1].generation < w.generation);
    }
    assert_eq!(log.swaps.len(), log.steps.windows(2).filter(|p| p[1].generation != p[0].generation).count() + usize::from(log.steps[0].generation > 0));
    assert!(!log.swaps.is_empty());
}

fn control(seed: u64) -> ControlConfig {
    ControlConfig {
        evolve: EvolveConfig {
            max_iterations: 30,
            population_size: 12,
            seed,
            ..EvolveConfig::default()
        },
        window_size: 4,
        min_window: 4,
        ..ControlConfig::default()
    }
}

fn heavy_then_light() -> Trace {
    let shifting = bundled_trace("motivation-shifting").unwrap();
    let (heavy, light) = (&shifting.records[0], &shifting.records[1]);
    let mut records = Vec::new();
    for (k, src) in std::iter::repeat_n(heavy, 6).chain(std::iter::repeat_n(light, 6)).enumerate() {
        let mut r = src.clone();
        r.t = 60.0 * k as f64;
        records.push(r);
    }
    Trace {
        id: "heavy-then-light".into(),
        note: String::new(),
        records,
    }
}

#[test]
fn stationary_trace_stages_nothing_and_a_phase_shift_stages() {
    let catalog = Catalog::bundled();
    let rc = ReplayConfig::default();
    let shifted = heavy_then_light();
    let stationary = Trace {
        id: "stationary".into(),
        note: String::new(),
        records: shifted.records[..6].to_vec(),
    };
    let window = stationary.slice(0..4);
    let cfg = control(17);
    let tuning = EvolveConfig {
        max_iterations: 200,
        population_size: 30,
        ..cfg.evolve.clone()
    };
    let mut tuned = evolve_cycle(&window, &catalog, &rc, &tuning, &[], None).unwrap();
    loop {
        let again = evolve_cycle(&window, &catalog, &rc, &tuning, &tuned.top(5), None).unwrap();
        if again.best.fitness >= tuned.best.fitness {
            break;
        }
        tuned = again;
    }
    let tuned = tuned.best.genome;
    let run = |trace: &Trace| {
        let config = TwoPlaneConfig {
            control: cfg.clone(),
            mode: RunMode::Lockstep { cycle_every: 1 },
            ..TwoPlaneConfig::default()
        };
        run_two_planes(trace, tuned.clone(), &catalog, &config, None, Arc::new(AtomicBool::new(false))).unwrap()
    };
    let calm = run(&stationary);
    assert!(!calm.history.is_empty());
    assert_eq!(calm.staging_events(), 0, "{:?}", calm.history);
    let shift = run(&shifted);
    assert!(shift.staging_events() >= 1, "{:?}", shift.history);
    let first = shift.history.iter().find(|e| e.staged).unwrap();
    assert!(first.window_last_step >= 6, "staged before the shift entered the window");
    assert!(shift.serving.swaps.len() >= 1);
}
