//! `policylab` command-line entry point.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error.

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use policylab_cli::evaluate::{self, EvaluateArgs};
use policylab_cli::evolve::{self, EvolveArgs, MutatorArgs};
use policylab_cli::report::{self, Role};
use policylab_cli::serve::{self, ServeArgs};
use policylab_cli::simulate::{self, SimulateArgs};
use policylab_cli::{inventory, UsageError};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "policylab", version, about = "Evaluate, evolve and serve LLM-serving rescheduling policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cost a serving plan: per-group phase breakdown, makespan and reconfiguration.
    Simulate(SimulateCmd),
    /// Replay a genome over a trace and write its cost breakdown.
    Evaluate(EvaluateCmd),
    /// Evolve policies on a trace; writes the best genome, convergence CSV and log.
    Evolve(EvolveCmd),
    /// Serve a trace with the data plane while the control plane evolves and hot-swaps.
    Serve(ServeCmd),
    /// Compare evaluated and evolved runs found under a directory.
    Report(ReportCmd),
    /// Print the status line of a serve run.
    Status {
        /// Output directory of `serve`.
        dir: PathBuf,
    },
    /// Bundled traces.
    Traces {
        #[command(subcommand)]
        action: TracesAction,
    },
    /// Seed genomes.
    Seeds {
        #[command(subcommand)]
        action: SeedsAction,
    },
    /// Hardware and model catalogs.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Debug, Args)]
struct SimulateCmd {
    /// Plan file to cost.
    #[arg(long)]
    plan: PathBuf,
    /// Previous plan; prints the reconfiguration cost of moving from it.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Catalog file (default: bundled).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Workload file: `{"workloads": {...}, "cluster": {...}}`.
    #[arg(long, conflicts_with = "trace")]
    workload: Option<PathBuf>,
    /// Take the workload from a trace record instead.
    #[arg(long)]
    trace: Option<String>,
    /// Record index within `--trace`.
    #[arg(long, default_value_t = 0, requires = "trace")]
    record: usize,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Run manifest supplying defaults for the flags below.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Bundled trace name or trace file.
    #[arg(long)]
    trace: Option<String>,
    /// Catalog file (default: bundled).
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Baseline,
    Evolved,
}

#[derive(Debug, Args)]
struct EvaluateCmd {
    #[command(flatten)]
    input: InputArgs,
    /// Seed name or genome file.
    #[arg(long)]
    genome: Option<String>,
    /// Row label in tables and file names.
    #[arg(long)]
    label: Option<String>,
    /// How `report` groups this run.
    #[arg(long, value_enum)]
    role: Option<RoleArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MutatorArg {
    Rule,
    Llm,
    Mixed,
}

#[derive(Debug, Args)]
struct MutatorFlags {
    /// Mutation operator (default: from the config, rule-based unless set).
    #[arg(long, value_enum)]
    mutator: Option<MutatorArg>,
    /// Probability of an LLM mutation under `--mutator mixed`.
    #[arg(long, default_value_t = 0.5)]
    p_llm: f64,
    /// LLM endpoint config file; the API key is read from the environment variable it names.
    #[arg(long)]
    llm_config: Option<PathBuf>,
}

impl MutatorFlags {
    fn into_args(self) -> MutatorArgs {
        MutatorArgs {
            mutator: self.mutator.map(|m| match m {
                MutatorArg::Rule => "rule".to_string(),
                MutatorArg::Llm => "llm".to_string(),
                MutatorArg::Mixed => "mixed".to_string(),
            }),
            p_llm: self.p_llm,
            llm_config: self.llm_config,
        }
    }
}

#[derive(Debug, Args)]
struct EvolveCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    mutators: MutatorFlags,
    /// RNG seed (overrides config and manifest).
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration cap (overrides config).
    #[arg(long)]
    iterations: Option<usize>,
    /// Genomes to warm-start from (seed names or files).
    #[arg(long)]
    warm: Vec<String>,
    /// Row label of the evolved run.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Debug, Args)]
struct ServeCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    mutators: MutatorFlags,
    /// Initially deployed genome (seed name or file).
    #[arg(long)]
    genome: Option<String>,
    /// RNG seed of the control plane.
    #[arg(long)]
    seed: Option<u64>,
    /// Lockstep mode: run a control cycle every N served steps.
    #[arg(long, conflicts_with = "threaded_pacing_ms")]
    cycle_every: Option<usize>,
    /// Threaded mode: wall-clock milliseconds per served step.
    #[arg(long)]
    threaded_pacing_ms: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportCmd {
    /// Directory holding run records.
    dir: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum TracesAction {
    /// List bundled traces.
    List,
    /// Print a bundled trace file.
    Show { name: String },
    /// Write a bundled trace to a file.
    Export { name: String, path: PathBuf },
    /// Check bundled traces against the transcription manifest.
    Audit,
}

#[derive(Debug, Subcommand)]
enum SeedsAction {
    /// List seed genomes.
    List,
    /// Print a seed genome file.
    Show { name: String },
}

#[derive(Debug, Subcommand)]
enum CatalogAction {
    /// Print the bundled catalog.
    Show,
    /// Convert quantities like "80GB" in a catalog draft into bytes.
    Convert {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Set on Ctrl-C; long-running commands stop cooperatively.
fn interrupt_flag() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let handler_stop = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || handler_stop.store(true, Ordering::SeqCst)) {
        eprintln!("warning: cannot install interrupt handler: {e}");
    }
    stop
}

fn print_notices(notices: &[String]) {
    for n in notices {
        eprintln!("notice: {n}");
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(c) => {
            let out = simulate::run(&SimulateArgs {
                plan: c.plan,
                from: c.from,
                catalog: c.catalog,
                workload: c.workload,
                trace: c.trace,
                record: c.record,
            })?;
            print!("{out}");
        }
        Command::Evaluate(c) => {
            let result = evaluate::run(&EvaluateArgs {
                manifest: c.input.manifest,
                genome: c.genome,
                trace: c.input.trace,
                catalog: c.input.catalog,
                config: c.input.config,
                out: c.input.out,
                label: c.label,
                role: c.role.map(|r| match r {
                    RoleArg::Baseline => Role::Baseline,
                    RoleArg::Evolved => Role::Evolved,
                }),
            })?;
            print!("{}", result.table);
            if let Some(path) = &result.written {
                println!("wrote {}", path.display());
            }
            if let Some(reason) = &result.failure {
                eprintln!("error: evaluation failed: {reason}");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Evolve(c) => {
            let outcome = evolve::run(
                &EvolveArgs {
                    manifest: c.input.manifest,
                    trace: c.input.trace,
                    catalog: c.input.catalog,
                    config: c.input.config,
                    seed: c.seed,
                    iterations: c.iterations,
                    warm: c.warm,
                    mutators: c.mutators.into_args(),
                    out: c.input.out,
                    label: c.label,
                },
                interrupt_flag(),
            )?;
            print_notices(&outcome.notices);
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Serve(c) => {
            let outcome = serve::run(
                &ServeArgs {
                    manifest: c.input.manifest,
                    trace: c.input.trace,
                    genome: c.genome,
                    catalog: c.input.catalog,
                    config: c.input.config,
                    seed: c.seed,
                    cycle_every: c.cycle_every,
                    threaded_pacing_ms: c.threaded_pacing_ms,
                    mutators: c.mutators.into_args(),
                    out: c.input.out,
                },
                interrupt_flag(),
            )?;
            print_notices(&outcome.notices);
            print!("{}", outcome.summary);
        }
        Command::Report(c) => {
            if !c.dir.is_dir() {
                return Err(policylab_cli::inputs::usage(format!("not a directory: {}", c.dir.display())));
            }
            let text = report::render(&report::load_runs(&c.dir)?);
            if let Some(path) = &c.out {
                policylab_cli::inputs::write_output(path, &text)?;
            }
            print!("{text}");
        }
        Command::Status { dir } => println!("{}", serve::status(&dir)?),
        Command::Traces { action } => match action {
            TracesAction::List => print!("{}", inventory::list_traces()?),
            TracesAction::Show { name } => print!("{}", inventory::show_trace(&name)?),
            TracesAction::Export { name, path } => {
                policylab_cli::inputs::write_output(&path, &inventory::show_trace(&name)?)?;
                println!("wrote {}", path.display());
            }
            TracesAction::Audit => {
                let (text, ok) = inventory::audit_traces();
                print!("{text}");
                if !ok {
                    return Ok(ExitCode::from(1));
                }
            }
        },
        Command::Seeds { action } => match action {
            SeedsAction::List => print!("{}", inventory::list_seeds()),
            SeedsAction::Show { name } => print!("{}", inventory::show_seed(&name)?),
        },
        Command::Catalog { action } => match action {
            CatalogAction::Show => println!("{}", policylab_core::catalog::Catalog::bundled().to_json()),
            CatalogAction::Convert { input, output } => {
                print!("{}", inventory::convert_catalog_file(&input, output.as_deref())?)
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
