//! Experiment runner: simulate plans, evaluate and evolve policies, serve traces with the
//! two-plane runtime, and render comparison reports.

pub mod evaluate;
pub mod evolve;
pub mod inputs;
pub mod inventory;
pub mod report;
pub mod serve;
pub mod simulate;

pub use inputs::{RunManifest, UsageError};
