//! Structured genome edits: parsing the fenced edit block and applying field-path changes.
//!
//! An edit block is a JSON object mapping field paths to new values, for example
//! `{"trigger.variant": "cost_benefit", "migration.w": 0.5}`. Variant and mode switches are
//! applied before parameter edits so a single block can switch a variant and set its parameter.

use policylab_core::policy::{Lineage, MigrationSpec, PolicyGenome, TriggerVariant, DEFAULT_MIGRATION_WEIGHT};
use policylab_core::scheduler::{Algorithm, BatchCandidatePolicy, TpFloorRule};
use serde_json::Value;
use thiserror::Error;

/// Largest time budget an edit may set.
pub const MAX_EDIT_TIME_BUDGET_SECONDS: f64 = 3600.0;
/// Largest per-replica batch an edit may add to the curated set.
pub const MAX_EDIT_BATCH: u64 = 4096;

/// Every editable field path with its accepted values.
pub const EDITABLE_PATHS: &[(&str, &str)] = &[
    ("trigger.variant", "one of \"periodic\", \"workload_delta\", \"cost_benefit\", \"never\""),
    ("trigger.variant.every", "integer >= 1 (periodic only)"),
    ("trigger.variant.delta", "number >= 0, relative workload change (workload_delta only)"),
    ("trigger.variant.margin", "number >= 0, seconds (cost_benefit only)"),
    ("trigger.mandatory_on_cluster_change", "boolean"),
    ("scheduler.algorithm", "one of \"greedy\", \"local_search\", \"exact\""),
    ("scheduler.time_budget_seconds", "number in (0, 3600]"),
    ("scheduler.batch_candidate_policy", "one of \"curated\", \"exhaustive_up_to_cap\""),
    ("scheduler.curated_set", "non-empty array of integers in [1, 4096]"),
    ("scheduler.tp_floor_rules", "array of {\"min_weight_bytes\": integer, \"min_tp\": integer >= 1}"),
    ("scheduler.secondary_objective_epsilon", "number >= 0"),
    ("scheduler.relative_gap", "number in [0, 1)"),
    ("scheduler.node_limit", "null or integer >= 1"),
    ("scheduler.seed", "integer >= 0"),
    ("migration.mode", "one of \"full\", \"minimal\", \"penalized\""),
    ("migration.w", "number >= 0 (penalized only)"),
];

/// Why an edit was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EditError {
    #[error("response contains no fenced edit block")]
    NoFence,
    #[error("edit block is malformed: {0}")]
    Malformed(String),
    #[error("unknown path `{0}`")]
    UnknownPath(String),
    #[error("`{path}`: {reason}")]
    OutOfRange { path: String, reason: String },
    #[error("edited genome is invalid: {0}")]
    Invalid(String),
}

/// Ordered field-path edits.
#[derive(Debug, Clone, PartialEq)]
pub struct GenomeEdit {
    pub edits: Vec<(String, Value)>,
}

impl GenomeEdit {
    /// Comma-separated list of edited paths.
    pub fn paths(&self) -> String {
        self.edits.iter().map(|(p, _)| p.as_str()).collect::<Vec<_>>().join(",")
    }
}

/// Contents of the first fenced block (```` ```json ```` or a bare fence).
fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n')? + 1;
    let lang = after[..body_start].trim();
    if !lang.is_empty() && !lang.eq_ignore_ascii_case("json") {
        return None;
    }
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// Extracts and parses the fenced edit block of a model response.
pub fn parse_edit(response: &str) -> Result<GenomeEdit, EditError> {
    let block = fenced_block(response).ok_or(EditError::NoFence)?;
    let value: Value = serde_json::from_str(block).map_err(|e| EditError::Malformed(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(EditError::Malformed("expected a JSON object of path -> value".into()));
    };
    if map.is_empty() {
        return Err(EditError::Malformed("no edits".into()));
    }
    let edits: Vec<(String, Value)> = map.into_iter().collect();
    for (path, _) in &edits {
        if !EDITABLE_PATHS.iter().any(|(p, _)| p == path) {
            return Err(EditError::UnknownPath(path.clone()));
        }
    }
    Ok(GenomeEdit { edits })
}

fn out_of_range(path: &str, reason: impl Into<String>) -> EditError {
    EditError::OutOfRange {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn as_str<'v>(path: &str, v: &'v Value) -> Result<&'v str, EditError> {
    v.as_str().ok_or_else(|| out_of_range(path, "expected a string"))
}

fn as_number(path: &str, v: &Value) -> Result<f64, EditError> {
    let x = v.as_f64().ok_or_else(|| out_of_range(path, "expected a number"))?;
    if !x.is_finite() {
        return Err(out_of_range(path, "must be finite"));
    }
    Ok(x)
}

fn as_uint(path: &str, v: &Value) -> Result<u64, EditError> {
    v.as_u64().ok_or_else(|| out_of_range(path, "expected a non-negative integer"))
}

fn apply_one(g: &mut PolicyGenome, path: &str, v: &Value) -> Result<(), EditError> {
    match path {
        "trigger.variant" => {
            g.trigger.variant = match as_str(path, v)? {
                "periodic" => TriggerVariant::Periodic { every: 1 },
                "workload_delta" => TriggerVariant::WorkloadDelta { delta: 0.1 },
                "cost_benefit" => TriggerVariant::CostBenefit { margin: 0.0 },
                "never" => TriggerVariant::Never,
                other => return Err(out_of_range(path, format!("unknown variant `{other}`"))),
            };
        }
        "trigger.variant.every" => {
            let every = as_uint(path, v)?;
            if every < 1 || every > u32::MAX as u64 {
                return Err(out_of_range(path, "must be >= 1"));
            }
            match &mut g.trigger.variant {
                TriggerVariant::Periodic { every: e } => *e = every as u32,
                _ => return Err(out_of_range(path, "applies to the periodic variant only")),
            }
        }
        "trigger.variant.delta" => {
            let delta = as_number(path, v)?;
            if delta < 0.0 {
                return Err(out_of_range(path, "must be >= 0"));
            }
            match &mut g.trigger.variant {
                TriggerVariant::WorkloadDelta { delta: d } => *d = delta,
                _ => return Err(out_of_range(path, "applies to the workload_delta variant only")),
            }
        }
        "trigger.variant.margin" => {
            let margin = as_number(path, v)?;
            if margin < 0.0 {
                return Err(out_of_range(path, "must be >= 0"));
            }
            match &mut g.trigger.variant {
                TriggerVariant::CostBenefit { margin: m } => *m = margin,
                _ => return Err(out_of_range(path, "applies to the cost_benefit variant only")),
            }
        }
        "trigger.mandatory_on_cluster_change" => {
            g.trigger.mandatory_on_cluster_change = v.as_bool().ok_or_else(|| out_of_range(path, "expected a boolean"))?;
        }
        "scheduler.algorithm" => {
            g.scheduler.algorithm = match as_str(path, v)? {
                "greedy" => Algorithm::Greedy,
                "local_search" => Algorithm::LocalSearch,
                "exact" => Algorithm::Exact,
                other => return Err(out_of_range(path, format!("unknown algorithm `{other}`"))),
            };
        }
        "scheduler.time_budget_seconds" => {
            let t = as_number(path, v)?;
            if !(t > 0.0 && t <= MAX_EDIT_TIME_BUDGET_SECONDS) {
                return Err(out_of_range(path, "must be in (0, 3600]"));
            }
            g.scheduler.time_budget_seconds = t;
        }
        "scheduler.batch_candidate_policy" => {
            g.scheduler.batch_candidate_policy = match as_str(path, v)? {
                "curated" => BatchCandidatePolicy::Curated,
                "exhaustive_up_to_cap" => BatchCandidatePolicy::ExhaustiveUpToCap,
                other => return Err(out_of_range(path, format!("unknown policy `{other}`"))),
            };
        }
        "scheduler.curated_set" => {
            let items = v.as_array().ok_or_else(|| out_of_range(path, "expected an array"))?;
            if items.is_empty() {
                return Err(out_of_range(path, "must not be empty"));
            }
            let mut set = Vec::with_capacity(items.len());
            for item in items {
                let b = as_uint(path, item)?;
                if !(1..=MAX_EDIT_BATCH).contains(&b) {
                    return Err(out_of_range(path, "batch sizes must be in [1, 4096]"));
                }
                if !set.contains(&(b as u32)) {
                    set.push(b as u32);
                }
            }
            g.scheduler.curated_set = set;
        }
        "scheduler.tp_floor_rules" => {
            let rules: Vec<TpFloorRule> =
                serde_json::from_value(v.clone()).map_err(|e| out_of_range(path, e.to_string()))?;
            if rules.iter().any(|r| r.min_tp == 0) {
                return Err(out_of_range(path, "min_tp must be >= 1"));
            }
            g.scheduler.tp_floor_rules = rules;
        }
        "scheduler.secondary_objective_epsilon" => {
            let e = as_number(path, v)?;
            if e < 0.0 {
                return Err(out_of_range(path, "must be >= 0"));
            }
            g.scheduler.secondary_objective_epsilon = e;
        }
        "scheduler.relative_gap" => {
            let gap = as_number(path, v)?;
            if !(0.0..1.0).contains(&gap) {
                return Err(out_of_range(path, "must be in [0, 1)"));
            }
            g.scheduler.relative_gap = gap;
        }
        "scheduler.node_limit" => {
            g.scheduler.node_limit = match v {
                Value::Null => None,
                other => {
                    let n = as_uint(path, other)?;
                    if n < 1 {
                        return Err(out_of_range(path, "must be >= 1 or null"));
                    }
                    Some(n)
                }
            };
        }
        "scheduler.seed" => g.scheduler.seed = as_uint(path, v)?,
        "migration.mode" => {
            g.migration = match as_str(path, v)? {
                "full" => MigrationSpec::Full,
                "minimal" => MigrationSpec::Minimal,
                "penalized" => MigrationSpec::Penalized {
                    w: DEFAULT_MIGRATION_WEIGHT,
                },
                other => return Err(out_of_range(path, format!("unknown mode `{other}`"))),
            };
        }
        "migration.w" => {
            let w = as_number(path, v)?;
            if w < 0.0 {
                return Err(out_of_range(path, "must be >= 0"));
            }
            match &mut g.migration {
                MigrationSpec::Penalized { w: current } => *current = w,
                _ => return Err(out_of_range(path, "applies to penalized migration only")),
            }
        }
        other => return Err(EditError::UnknownPath(other.to_string())),
    }
    Ok(())
}

fn is_switch(path: &str) -> bool {
    path == "trigger.variant" || path == "migration.mode"
}

/// Applies an edit to a copy of `parent`, stamping lineage and id, and validates the result.
pub fn apply_edit(parent: &PolicyGenome, edit: &GenomeEdit) -> Result<PolicyGenome, EditError> {
    let mut g = parent.clone();
    for (path, value) in edit.edits.iter().filter(|(p, _)| is_switch(p)) {
        apply_one(&mut g, path, value)?;
    }
    for (path, value) in edit.edits.iter().filter(|(p, _)| !is_switch(p)) {
        apply_one(&mut g, path, value)?;
    }
    g.lineage = Lineage {
        parent: Some(parent.id.clone()),
        mutation: format!("llm:{}", edit.paths()),
    };
    g.restamp();
    g.validate().map_err(|e| EditError::Invalid(e.to_string()))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use policylab_core::policy::seed_by_name;

    fn fenced(body: &str) -> String {
        format!("Here is my change.\n```json\n{body}\n```\nDone.")
    }

    #[test]
    fn switch_and_parameter_round_trip() {
        let parent = seed_by_name("exact-costbenefit-penalized").unwrap();
        let edit = parse_edit(&fenced(r#"{"trigger.variant": "cost_benefit", "migration.w": 0.5}"#)).unwrap();
        let child = apply_edit(&parent, &edit).unwrap();
        assert_eq!(child.migration, MigrationSpec::Penalized { w: 0.5 });
        assert_eq!(child.trigger.variant, TriggerVariant::CostBenefit { margin: 0.0 });
        child.validate().unwrap();
        let text = child.to_canonical();
        assert_eq!(PolicyGenome::from_text(&text).unwrap(), child);
    }

    #[test]
    fn parameter_after_switch_in_same_block() {
        let parent = seed_by_name("greedy-periodic-full").unwrap();
        let edit = parse_edit(&fenced(r#"{"trigger.variant.delta": 0.3, "trigger.variant": "workload_delta"}"#)).unwrap();
        let child = apply_edit(&parent, &edit).unwrap();
        assert_eq!(child.trigger.variant, TriggerVariant::WorkloadDelta { delta: 0.3 });
    }

    #[test]
    fn prose_without_fence_is_rejected() {
        assert_eq!(parse_edit("I would lower the margin a bit."), Err(EditError::NoFence));
    }

    #[test]
    fn non_genome_field_is_unknown_path() {
        let err = parse_edit(&fenced(r#"{"elite_ratio": 0.5}"#)).unwrap_err();
        assert_eq!(err, EditError::UnknownPath("elite_ratio".into()));
    }

    #[test]
    fn out_of_range_names_the_invariant() {
        let parent = seed_by_name("exact-costbenefit-penalized").unwrap();
        let edit = parse_edit(&fenced(r#"{"migration.w": -1}"#)).unwrap();
        match apply_edit(&parent, &edit).unwrap_err() {
            EditError::OutOfRange { path, reason } => {
                assert_eq!(path, "migration.w");
                assert!(reason.contains(">= 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parameter_for_inactive_variant_is_rejected() {
        let parent = seed_by_name("greedy-periodic-full").unwrap();
        let edit = parse_edit(&fenced(r#"{"trigger.variant.margin": 2.0}"#)).unwrap();
        assert!(matches!(apply_edit(&parent, &edit), Err(EditError::OutOfRange { .. })));
    }

    #[test]
    fn malformed_blocks() {
        assert!(matches!(parse_edit(&fenced("{not json")), Err(EditError::Malformed(_))));
        assert!(matches!(parse_edit(&fenced("[1, 2]")), Err(EditError::Malformed(_))));
        assert!(matches!(parse_edit(&fenced("{}")), Err(EditError::Malformed(_))));
        assert_eq!(parse_edit("```python\nx = 1\n```"), Err(EditError::NoFence));
    }

    #[test]
    fn curated_set_and_node_limit() {
        let parent = seed_by_name("exact-never-full").unwrap();
        let edit = parse_edit(&fenced(r#"{"scheduler.curated_set": [8, 16, 16, 32], "scheduler.node_limit": 5000}"#)).unwrap();
        let child = apply_edit(&parent, &edit).unwrap();
        assert_eq!(child.scheduler.curated_set, vec![8, 16, 32]);
        assert_eq!(child.scheduler.node_limit, Some(5000));
        let empty = parse_edit(&fenced(r#"{"scheduler.curated_set": []}"#)).unwrap();
        assert!(apply_edit(&parent, &empty).is_err());
    }

    #[test]
    fn lineage_records_paths() {
        let parent = seed_by_name("greedy-periodic-full").unwrap();
        let edit = parse_edit(&fenced(r#"{"scheduler.algorithm": "exact"}"#)).unwrap();
        let child = apply_edit(&parent, &edit).unwrap();
        assert_eq!(child.lineage.mutation, "llm:scheduler.algorithm");
        assert_eq!(child.lineage.parent.as_deref(), Some(parent.id.as_str()));
    }
}
