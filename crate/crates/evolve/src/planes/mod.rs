//! The two-plane runtime: a data plane serving a live trace under the deployed genome and a
//! control plane evolving replacements on sliding snapshots, joined by a snapshot buffer and a
//! staging slot.

pub mod runtime;
pub mod shared;

pub use runtime::{
    control_plane_run, data_plane_run, run_two_planes, should_stage, status_line, write_jsonl, ControlConfig,
    ControlPlane, CycleEvent, DataPlane, RunMode, ServingLog, ServingStep, SwapEvent, TwoPlaneConfig, TwoPlaneOutcome,
    DEFAULT_IMPROVEMENT_MARGIN,
};
pub use shared::{MonitoringRecord, PlaneError, SnapshotBuffer, StagedPolicy, StagingSlot};
