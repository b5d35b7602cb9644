//! `evaluate`: replay one genome over one trace and emit its cost breakdown.

use crate::inputs::{ensure_dir, load_catalog, load_config, load_genome, load_trace, required, RunManifest};
use crate::report::{Role, RunRecord};
use anyhow::{Context as _, Result};
use policylab_core::evaluator::{replay, EvalReport, ReplayConfig};
use policylab_core::policy::seed_names;
use std::path::PathBuf;

/// Inputs of `evaluate`.
#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub manifest: Option<PathBuf>,
    pub genome: Option<String>,
    pub trace: Option<String>,
    pub catalog: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub label: Option<String>,
    pub role: Option<Role>,
}

/// What `evaluate` produced.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub record: RunRecord,
    pub table: String,
    pub written: Option<PathBuf>,
    /// Why the genome failed on the trace, if it did.
    pub failure: Option<String>,
}

/// Runs `evaluate`. A failed replay still produces its record; callers decide the exit code.
pub fn run(args: &EvaluateArgs) -> Result<Evaluation> {
    let manifest = RunManifest::optional(args.manifest.as_deref())?;
    let catalog = load_catalog(args.catalog.as_deref().or(manifest.catalog.as_deref()))?;
    let genome_spec = required(args.genome.clone(), manifest.genome.clone(), "genome")?;
    let trace_spec = required(args.trace.clone(), manifest.trace.clone(), "trace")?;
    let config: ReplayConfig = load_config(args.config.as_deref().or(manifest.config.as_deref()))?;
    let genome = load_genome(&genome_spec)?;
    let trace = load_trace(&trace_spec, &catalog)?;
    let report = replay(&genome, &trace, &catalog, &config).context("replay failed")?;

    let label = args.label.clone().unwrap_or_else(|| {
        if seed_names().contains(&genome_spec) {
            genome_spec.clone()
        } else {
            genome.id[..genome.id.len().min(12)].to_string()
        }
    });
    let failure = failure_reason(&report, config.sim.infeasible_penalty_seconds);
    let table = render_table(&label, &report, failure.as_deref());
    let record = RunRecord {
        label,
        role: args.role.unwrap_or(Role::Baseline),
        genome,
        report,
    };
    let written = match args.out.clone().or(manifest.output_dir) {
        Some(dir) => {
            ensure_dir(&dir)?;
            Some(record.write(&dir)?)
        }
        None => None,
    };
    Ok(Evaluation {
        record,
        table,
        written,
        failure,
    })
}

/// A replay fails when the scheduler errors or its cost reaches the infeasibility penalty.
pub fn failure_reason(report: &EvalReport, penalty: f64) -> Option<String> {
    match &report.failure {
        Some(reason) => Some(reason.clone()),
        None if report.t_total >= penalty => {
            Some(format!("infeasible placement: T_total reached the {penalty:e} s penalty"))
        }
        None => None,
    }
}

/// Breakdown table for one report, with a failure line when it failed.
pub fn render_table(label: &str, report: &EvalReport, failure: Option<&str>) -> String {
    let mut s = format!("trace {}\n{}\n{}\n", report.trace_id, EvalReport::table_header(), report.table_row(label));
    if let Some(reason) = failure {
        s.push_str(&format!("evaluation failed: {reason}\n"));
    }
    s
}
