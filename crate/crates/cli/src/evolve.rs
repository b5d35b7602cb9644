//! `evolve`: one evolution cycle on a trace, emitting the best genome and convergence data.

use crate::inputs::{
    ensure_dir, file_stem, load_catalog, load_config, load_genome, load_trace, required, write_output, RunManifest,
};
use crate::report::{Role, RunRecord};
use anyhow::{anyhow, Context as _, Result};
use policylab_core::evaluator::ReplayConfig;
use policylab_evolve::llm::{LlmEndpointConfig, LlmMutator};
use policylab_evolve::{EvolveConfig, Evolver, MutatorKind, StopCause, TraceEvaluator};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

/// Config file of `evolve`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveRunConfig {
    pub evolve: EvolveConfig,
    pub replay: ReplayConfig,
}

/// Mutator selection flags shared by `evolve` and `serve`.
#[derive(Debug, Clone, Default)]
pub struct MutatorArgs {
    /// `rule`, `llm` or `mixed`; `None` keeps the config's choice.
    pub mutator: Option<String>,
    pub p_llm: f64,
    pub llm_config: Option<PathBuf>,
}

impl MutatorArgs {
    /// Applies the flag to `kind`.
    pub fn kind(&self, kind: MutatorKind) -> Result<MutatorKind> {
        match self.mutator.as_deref() {
            None => Ok(kind),
            Some("rule") => Ok(MutatorKind::RuleBased),
            Some("llm") => Ok(MutatorKind::Llm),
            Some("mixed") => Ok(MutatorKind::Mixed { p_llm: self.p_llm }),
            Some(other) => Err(crate::inputs::usage(format!("unknown mutator `{other}`"))),
        }
    }

    /// The HTTP mutator when `kind` uses one.
    pub fn build(&self, kind: MutatorKind) -> Result<Option<Arc<LlmMutator>>> {
        if matches!(kind, MutatorKind::RuleBased) {
            return Ok(None);
        }
        let config: LlmEndpointConfig = load_config(self.llm_config.as_deref())?;
        let mutator = LlmMutator::http(config).map_err(|e| anyhow!("cannot set up the LLM mutator: {e}"))?;
        Ok(Some(Arc::new(mutator)))
    }
}

/// Inputs of `evolve`.
#[derive(Debug, Clone, Default)]
pub struct EvolveArgs {
    pub manifest: Option<PathBuf>,
    pub trace: Option<String>,
    pub catalog: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub warm: Vec<String>,
    pub mutators: MutatorArgs,
    pub out: Option<PathBuf>,
    pub label: Option<String>,
}

/// What `evolve` produced.
#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub summary: String,
    pub notices: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Runs `evolve`; `stop` ends the cycle early with the best found so far.
pub fn run(args: &EvolveArgs, stop: Arc<AtomicBool>) -> Result<EvolveOutcome> {
    let manifest = RunManifest::optional(args.manifest.as_deref())?;
    let catalog = load_catalog(args.catalog.as_deref().or(manifest.catalog.as_deref()))?;
    let trace_spec = required(args.trace.clone(), manifest.trace.clone(), "trace")?;
    let mut config: EvolveRunConfig = load_config(args.config.as_deref().or(manifest.config.as_deref()))?;
    if let Some(seed) = args.seed.or(manifest.seed) {
        config.evolve.seed = seed;
    }
    if let Some(n) = args.iterations {
        config.evolve.max_iterations = n;
    }
    config.evolve.mutator = args.mutators.kind(config.evolve.mutator)?;
    config.evolve.validate().map_err(|e| anyhow!("invalid evolve config: {e}"))?;
    let out_dir = args.out.clone().or(manifest.output_dir).unwrap_or_else(|| PathBuf::from("runs"));

    let trace = load_trace(&trace_spec, &catalog)?;
    let mut warm = Vec::new();
    for spec in &args.warm {
        warm.push(load_genome(spec)?);
    }
    let llm = args.mutators.build(config.evolve.mutator)?;

    let evaluator = Arc::new(TraceEvaluator::new(trace.clone(), catalog.clone(), config.replay));
    let mut evolver = Evolver::new(config.evolve.clone(), evaluator).with_stop(stop);
    if let Some(l) = llm {
        evolver = evolver.with_llm(l);
    }
    let result = evolver.run(&warm).context("evolution failed")?;

    ensure_dir(&out_dir)?;
    let stem = file_stem(&trace.id);
    let best_path = out_dir.join(format!("{stem}.best_genome.json"));
    let curve_path = out_dir.join(format!("{stem}.convergence.csv"));
    let log_path = out_dir.join(format!("{stem}.evolution.jsonl"));
    write_output(&best_path, &(result.best.genome.to_canonical() + "\n"))?;
    write_output(&curve_path, &result.convergence_csv())?;
    result
        .write_log(&log_path)
        .with_context(|| format!("cannot write {}", log_path.display()))?;
    let report = result
        .best
        .report
        .clone()
        .ok_or_else(|| anyhow!("best candidate has no report"))?;
    let record = RunRecord {
        label: args.label.clone().unwrap_or_else(|| "evolved".into()),
        role: Role::Evolved,
        genome: result.best.genome.clone(),
        report,
    };
    let record_path = record.write(&out_dir)?;

    let initial = result.history.first().map(|h| h.best_fitness).unwrap_or(f64::NAN);
    let mut summary = String::new();
    writeln!(summary, "trace {} ({} records)", trace.id, trace.len()).unwrap();
    writeln!(
        summary,
        "iterations {} stop {} archive {} cells elapsed {:.1}s",
        result.iterations(),
        stop_label(result.stop),
        result.archive.len(),
        result.elapsed_seconds
    )
    .unwrap();
    writeln!(summary, "initial best {initial:.3}s").unwrap();
    writeln!(
        summary,
        "best {:.3}s ({:.1}% of initial) genome {}: {}",
        result.best.fitness,
        result.best.fitness / initial * 100.0,
        &result.best.genome.id[..result.best.genome.id.len().min(12)],
        result.best.genome.summary()
    )
    .unwrap();
    if let Some(stats) = result.llm_stats {
        writeln!(
            summary,
            "llm requests {} accepted {} rejected {} unavailable {}",
            stats.requests, stats.accepted, stats.rejected, stats.unavailable
        )
        .unwrap();
    }
    Ok(EvolveOutcome {
        summary,
        notices: result.notices.clone(),
        files: vec![best_path, curve_path, log_path, record_path],
    })
}

fn stop_label(stop: StopCause) -> &'static str {
    match stop {
        StopCause::MaxIterations => "max_iterations",
        StopCause::Converged => "converged",
        StopCause::EvolutionTimeout => "evolution_timeout",
        StopCause::Interrupted => "interrupted",
    }
}
