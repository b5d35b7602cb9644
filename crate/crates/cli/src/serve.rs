//! `serve` runs the data and control planes over a trace; `status` summarizes their logs.

use crate::evolve::MutatorArgs;
use crate::inputs::{
    ensure_dir, load_catalog, load_config, load_genome, load_trace, read_input, required, write_output, RunManifest,
};
use anyhow::{anyhow, Context as _, Result};
use policylab_evolve::planes::{run_two_planes, status_line, write_jsonl, CycleEvent, RunMode, ServingStep, TwoPlaneConfig};
use serde::de::DeserializeOwned;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

/// Serving log file name.
pub const SERVING_LOG: &str = "serving.jsonl";
/// Evolution history file name.
pub const HISTORY_LOG: &str = "history.jsonl";
/// Hot-swap log file name.
pub const SWAP_LOG: &str = "swaps.jsonl";

/// Inputs of `serve`.
#[derive(Debug, Clone, Default)]
pub struct ServeArgs {
    pub manifest: Option<PathBuf>,
    pub trace: Option<String>,
    pub genome: Option<String>,
    pub catalog: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub cycle_every: Option<usize>,
    pub threaded_pacing_ms: Option<u64>,
    pub mutators: MutatorArgs,
    pub out: Option<PathBuf>,
}

/// What `serve` produced.
#[derive(Debug, Clone)]
pub struct ServeOutcome {
    pub summary: String,
    pub notices: Vec<String>,
    pub interrupted: bool,
    pub staging_events: usize,
}

/// Runs both planes until the trace ends or `stop` is set, then writes the logs.
pub fn run(args: &ServeArgs, stop: Arc<AtomicBool>) -> Result<ServeOutcome> {
    let manifest = RunManifest::optional(args.manifest.as_deref())?;
    let catalog = load_catalog(args.catalog.as_deref().or(manifest.catalog.as_deref()))?;
    let trace_spec = required(args.trace.clone(), manifest.trace.clone(), "trace")?;
    let genome_spec = required(args.genome.clone(), manifest.genome.clone(), "genome")?;
    let mut config: TwoPlaneConfig = load_config(args.config.as_deref().or(manifest.config.as_deref()))?;
    if let Some(seed) = args.seed.or(manifest.seed) {
        config.control.evolve.seed = seed;
    }
    match (args.cycle_every, args.threaded_pacing_ms) {
        (Some(_), Some(_)) => {
            return Err(crate::inputs::usage("give either --cycle-every or --threaded-pacing-ms, not both"))
        }
        (Some(every), None) => config.mode = RunMode::Lockstep { cycle_every: every },
        (None, Some(ms)) => config.mode = RunMode::Threaded { step_pacing_ms: ms },
        (None, None) => {}
    }
    config.control.evolve.mutator = args.mutators.kind(config.control.evolve.mutator)?;
    config.control.validate().map_err(|e| anyhow!("{e}"))?;
    let out_dir = args.out.clone().or(manifest.output_dir).unwrap_or_else(|| PathBuf::from("serve"));

    let trace = load_trace(&trace_spec, &catalog)?;
    let initial = load_genome(&genome_spec)?;
    let llm = args.mutators.build(config.control.evolve.mutator)?;
    let outcome = run_two_planes(&trace, initial, &catalog, &config, llm, stop).map_err(|e| anyhow!("{e}"))?;

    ensure_dir(&out_dir)?;
    let serving = out_dir.join(SERVING_LOG);
    outcome
        .serving
        .write_jsonl(&serving)
        .with_context(|| format!("cannot write {}", serving.display()))?;
    write_jsonl(&out_dir.join(SWAP_LOG), &outcome.serving.swaps).context("cannot write the swap log")?;
    write_jsonl(&out_dir.join(HISTORY_LOG), &outcome.history).context("cannot write the history")?;
    write_output(&out_dir.join("final_genome.json"), &(outcome.final_genome.to_canonical() + "\n"))?;
    write_output(&out_dir.join("serving_report.csv"), &outcome.serving.report.to_csv())?;

    let mut summary = String::new();
    writeln!(
        summary,
        "served {} of {} steps of {}; {} cycles, {} staged, {} swaps; T_total {:.1}s",
        outcome.serving.steps.len(),
        trace.len(),
        trace.id,
        outcome.history.len(),
        outcome.staging_events(),
        outcome.serving.swaps.len(),
        outcome.serving.report.t_total
    )
    .unwrap();
    writeln!(summary, "{}", status_line(&outcome.serving.steps, &outcome.history)).unwrap();
    if outcome.interrupted {
        writeln!(summary, "interrupted; logs flushed to {}", out_dir.display()).unwrap();
    }
    let mut notices: Vec<String> = outcome.history.iter().flat_map(|e| e.notices.clone()).collect();
    notices.dedup();
    Ok(ServeOutcome {
        summary,
        notices,
        interrupted: outcome.interrupted,
        staging_events: outcome.staging_events(),
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_input(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

/// Status line of the serve run whose logs are in `dir`.
pub fn status(dir: &Path) -> Result<String> {
    let steps: Vec<ServingStep> = read_jsonl(&dir.join(SERVING_LOG))?;
    let history: Vec<CycleEvent> = read_jsonl(&dir.join(HISTORY_LOG))?;
    Ok(status_line(&steps, &history))
}
