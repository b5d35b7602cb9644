//! Evolutionary search over rescheduling policies, LLM-guided mutation and the two-plane
//! serving runtime.

pub mod archive;
pub mod descriptor;
pub mod engine;
pub mod eval;
pub mod llm;
pub mod mutate;
pub mod planes;

pub use archive::{Archive, Candidate, CandidateStatus, Insertion};
pub use descriptor::{feature_descriptor, Cell, GridShape};
pub use engine::{
    evolve_cycle, CandidateRecord, CycleResult, EvolveConfig, EvolveError, Evolver, IterationRecord, MutatorKind, StopCause,
};
pub use eval::{run_with_timeouts, Evaluate, TimedEval, TraceEvaluator};
pub use mutate::mutate_rule_based;
