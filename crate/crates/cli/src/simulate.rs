//! `simulate`: cost a serving plan directly with the analytical simulator.

use crate::inputs::{load_catalog, load_trace, read_input, usage};
use anyhow::{anyhow, Context as _, Result};
use policylab_core::catalog::Catalog;
use policylab_core::plan::{
    model_latency, plan_makespan_penalized, validate, ClusterState, Context, ServingPlan, WorkloadSnapshot,
};
use policylab_core::sim::{reconfig_breakdown, serve_latency_breakdown, SimConfig};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Inputs of `simulate`.
#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub plan: PathBuf,
    pub from: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub workload: Option<PathBuf>,
    pub trace: Option<String>,
    pub record: usize,
}

/// Workload file: demand per model and, optionally, the cluster it runs on.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadFile {
    workloads: WorkloadSnapshot,
    #[serde(default)]
    cluster: Option<ClusterState>,
}

fn load_plan(path: &Path) -> Result<ServingPlan> {
    let text = read_input(path)?;
    ServingPlan::from_json(&text).with_context(|| format!("invalid plan {}", path.display()))
}

fn full_cluster(catalog: &Catalog) -> ClusterState {
    ClusterState::new(catalog.gpu_types().iter().map(|g| (g.name.clone(), g.total_count)))
}

fn workload_of(args: &SimulateArgs, catalog: &Catalog) -> Result<Option<(WorkloadSnapshot, ClusterState)>> {
    match (&args.workload, &args.trace) {
        (Some(_), Some(_)) => Err(usage("give either --workload or --trace, not both")),
        (Some(path), None) => {
            let text = read_input(path)?;
            let w: WorkloadFile =
                serde_json::from_str(&text).with_context(|| format!("invalid workload {}", path.display()))?;
            let cluster = w.cluster.unwrap_or_else(|| full_cluster(catalog));
            Ok(Some((w.workloads, cluster)))
        }
        (None, Some(name)) => {
            let trace = load_trace(name, catalog)?;
            let record = trace.records.get(args.record).ok_or_else(|| {
                usage(format!("trace `{}` has {} records; --record {} is out of range", trace.id, trace.len(), args.record))
            })?;
            Ok(Some((record.workloads.clone(), record.cluster.clone())))
        }
        (None, None) => Ok(None),
    }
}

/// Runs `simulate` and returns the printed report.
pub fn run(args: &SimulateArgs) -> Result<String> {
    let catalog = load_catalog(args.catalog.as_deref())?;
    let cfg = SimConfig::default();
    let plan = load_plan(&args.plan)?;
    let from = args.from.as_deref().map(load_plan).transpose()?;
    let workload = workload_of(args, &catalog)?;

    let (demand, cluster) = workload
        .clone()
        .unwrap_or_else(|| (WorkloadSnapshot::new(), full_cluster(&catalog)));
    if let Err(violations) = validate(&plan, &Context::cold(demand.clone(), cluster), &catalog, &cfg) {
        let list: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
        return Err(anyhow!(
            "plan {} is invalid:\n{}",
            args.plan.display(),
            list.join("\n")
        ));
    }

    let mut out = String::new();
    writeln!(out, "plan {}: {}", args.plan.display(), plan).unwrap();
    if workload.is_some() {
        render_latency(&mut out, &plan, &demand, &catalog, &cfg)?;
    } else {
        writeln!(out, "no workload given; latency not computed").unwrap();
    }
    if let Some(prev) = from {
        let r = reconfig_breakdown(&prev, &plan, &catalog);
        let from_path = args.from.as_ref().expect("from plan was loaded").display();
        writeln!(
            out,
            "reconfig from {from_path}: terminate {:.2} s + load {:.2} s = {:.2} s",
            r.terminate,
            r.load,
            r.total()
        )
        .unwrap();
    }
    Ok(out)
}

fn render_latency(
    out: &mut String,
    plan: &ServingPlan,
    demand: &WorkloadSnapshot,
    catalog: &Catalog,
    cfg: &SimConfig,
) -> Result<()> {
    writeln!(
        out,
        "{:<36} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "group", "prefill_cmp", "prefill_ar", "decode_cmp", "decode_ar", "latency"
    )
    .unwrap();
    for g in &plan.groups {
        let Some(d) = demand.get(&g.model) else {
            writeln!(out, "{:<36} (no demand)", group_label(g)).unwrap();
            continue;
        };
        let model = catalog.require_model(&g.model)?;
        let gpu = catalog.require_gpu(&g.gpu)?;
        let b = serve_latency_breakdown(model, gpu, g.tp, g.batch as u64, d.prefill as u64, d.decode as u64, cfg.decode_sum)?;
        writeln!(
            out,
            "{:<36} {:>11.4}s {:>11.4}s {:>11.4}s {:>11.4}s {:>11.4}s",
            group_label(g),
            b.prefill_compute,
            b.prefill_allreduce,
            b.decode_compute,
            b.decode_allreduce,
            b.total()
        )
        .unwrap();
    }
    for (model, d) in demand {
        let capacity: u64 = plan.groups_of(model).map(|g| g.capacity()).sum();
        let passes = if capacity == 0 { 0 } else { (d.batch as u64).div_ceil(capacity).max(1) };
        let latency = model_latency(plan, model, d, catalog, cfg).unwrap_or(cfg.infeasible_penalty_seconds);
        writeln!(out, "L[{model}] = {latency:.4} s ({passes} passes for batch {})", d.batch).unwrap();
    }
    let makespan = plan_makespan_penalized(plan, demand, catalog, cfg);
    writeln!(out, "makespan = {:.4} s", makespan.t_balanced).unwrap();
    Ok(())
}

fn group_label(g: &policylab_core::plan::ReplicaGroup) -> String {
    format!("{}@{} tp{} b{} x{}", g.model, g.gpu, g.tp, g.batch, g.count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reconfig").join(name)
    }

    fn example(plan: &str, from: &str) -> SimulateArgs {
        SimulateArgs {
            plan: fixture(plan),
            from: Some(fixture(from)),
            catalog: Some(fixture("catalog.json")),
            ..SimulateArgs::default()
        }
    }

    #[test]
    fn slow_to_fast_move_costs_point_six_one() {
        let out = run(&example("fast.json", "slow.json")).unwrap();
        assert!(out.contains("terminate 0.41 s + load 0.20 s = 0.61 s"), "{out}");
    }

    #[test]
    fn identical_plans_cost_nothing() {
        let out = run(&example("slow.json", "slow.json")).unwrap();
        assert!(out.contains("= 0.00 s"), "{out}");
    }

    #[test]
    fn workload_prints_breakdown_and_makespan() {
        let mut args = example("fast.json", "slow.json");
        args.workload = Some(fixture("workload.json"));
        let out = run(&args).unwrap();
        assert!(out.contains("L[model-13gb]"), "{out}");
        assert!(out.contains("makespan = "), "{out}");
    }

    #[test]
    fn invalid_plan_lists_violations() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, r#"{"groups":[{"model":"nope","gpu":"gpu-fast","tp":1,"batch":8,"count":1}]}"#).unwrap();
        let args = SimulateArgs {
            plan: bad,
            catalog: Some(fixture("catalog.json")),
            ..SimulateArgs::default()
        };
        let err = run(&args).unwrap_err().to_string();
        assert!(err.contains("unknown model `nope`"), "{err}");
    }
}
