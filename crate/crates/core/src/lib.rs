//! Serving simulator, plan model, schedulers, policy interpreter, trace replay and bundled
//! traces for experimenting with self-evolving LLM serving policies.

pub mod catalog;
pub mod plan;
pub mod scheduler;
pub mod sim;
pub mod timing;
pub mod policy;
pub mod traces;
pub mod evaluator;
