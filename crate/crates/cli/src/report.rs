//! Run records written by `evaluate` and `evolve`, and the `report` comparison tables.

use crate::inputs::{file_stem, write_output};
use anyhow::{Context as _, Result};
use policylab_core::evaluator::EvalReport;
use policylab_core::policy::PolicyGenome;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Suffix of run record files.
pub const RUN_SUFFIX: &str = ".run.json";

/// Whether a run is a hand-written baseline or an evolved policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Baseline,
    Evolved,
}

/// One genome evaluated on one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub role: Role,
    pub genome: PolicyGenome,
    pub report: EvalReport,
}

impl RunRecord {
    /// `<trace>.<label>` file stem.
    pub fn stem(&self) -> String {
        format!("{}.{}", file_stem(&self.report.trace_id), file_stem(&self.label))
    }

    /// Writes the record and its per-interval CSV into `dir`; returns the record path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}{RUN_SUFFIX}", self.stem()));
        let json = serde_json::to_string_pretty(self).expect("run record serializes");
        write_output(&path, &(json + "\n"))?;
        write_output(&dir.join(format!("{}.csv", self.stem())), &self.report.to_csv())?;
        Ok(path)
    }
}

/// Run record files under `dir`, recursively, in path order.
pub fn find_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).with_context(|| format!("cannot list {}", d.display()))?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.to_string_lossy().ends_with(RUN_SUFFIX) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every run record under `dir`.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    find_runs(dir)?
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid run record {}", p.display()))
        })
        .collect()
}

fn row(trace: &str, r: &RunRecord) -> String {
    let total = if r.report.succeeded() {
        format!("{:>10.1}s", r.report.t_total)
    } else {
        format!("{:>11}", "failed")
    };
    format!(
        "{:<20} {:<32} {:>4} {:>11.1}s {:>11.1}s {:>11.1}s {}",
        trace, r.label, r.report.n, r.report.sum_stale, r.report.sum_reconfig, r.report.sum_serve, total
    )
}

/// Comparison table grouped by trace (baselines first, then evolved), followed by
/// evolved-vs-best-baseline deltas. A pure function of the records.
pub fn render(runs: &[RunRecord]) -> String {
    if runs.is_empty() {
        return "no runs found\n".to_string();
    }
    let mut sorted: Vec<&RunRecord> = runs.iter().collect();
    sorted.sort_by(|a, b| {
        (a.report.trace_id.as_str(), a.role, a.label.as_str(), a.genome.id.as_str()).cmp(&(
            b.report.trace_id.as_str(),
            b.role,
            b.label.as_str(),
            b.genome.id.as_str(),
        ))
    });
    let mut out = String::new();
    writeln!(
        out,
        "{:<20} {:<32} {:>4} {:>12} {:>12} {:>12} {:>11}",
        "trace", "policy", "N", "sum_stale", "sum_reconfig", "sum_serve", "T_total"
    )
    .unwrap();
    for r in &sorted {
        writeln!(out, "{}", row(&r.report.trace_id, r)).unwrap();
    }

    let mut traces: Vec<&str> = sorted.iter().map(|r| r.report.trace_id.as_str()).collect();
    traces.dedup();
    let mut deltas = Vec::new();
    for trace in traces {
        let of = |role: Role| {
            sorted
                .iter()
                .filter(|r| r.report.trace_id == trace && r.role == role && r.report.succeeded())
                .min_by(|a, b| a.report.t_total.total_cmp(&b.report.t_total))
                .copied()
        };
        if let (Some(base), Some(evolved)) = (of(Role::Baseline), of(Role::Evolved)) {
            let dt = (evolved.report.t_total - base.report.t_total) / base.report.t_total * 100.0;
            let dthroughput = (base.report.t_total / evolved.report.t_total - 1.0) * 100.0;
            deltas.push(format!(
                "{:<20} {:<32} {:>10.1}s {:<32} {:>10.1}s {:>+9.1}% {:>+11.1}%",
                trace, base.label, base.report.t_total, evolved.label, evolved.report.t_total, dt, dthroughput
            ));
        }
    }
    if !deltas.is_empty() {
        writeln!(out).unwrap();
        writeln!(
            out,
            "{:<20} {:<32} {:>11} {:<32} {:>11} {:>10} {:>12}",
            "trace", "best baseline", "T_total", "evolved", "T_total", "dT_total", "dthroughput"
        )
        .unwrap();
        for d in deltas {
            writeln!(out, "{d}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use policylab_core::evaluator::IntervalCosts;
    use policylab_core::policy::seed_by_name;

    fn record(trace: &str, label: &str, role: Role, total: f64) -> RunRecord {
        let mut report = EvalReport::from_intervals(
            "g",
            trace,
            vec![IntervalCosts {
                index: 1,
                step: 0,
                t_sched: 0.0,
                t_stale: 0.0,
                t_reconfig: 0.0,
                t_serve: total,
            }],
        );
        report.t_total = total;
        RunRecord {
            label: label.into(),
            role,
            genome: seed_by_name("greedy-periodic-full").unwrap(),
            report,
        }
    }

    #[test]
    fn empty_is_explicit() {
        assert_eq!(render(&[]), "no runs found\n");
    }

    #[test]
    fn six_rows_and_deltas_for_two_traces() {
        let runs = vec![
            record("volatile", "ours", Role::Evolved, 50.0),
            record("volatile", "greedy", Role::Baseline, 100.0),
            record("volatile", "exact", Role::Baseline, 200.0),
            record("stable", "greedy", Role::Baseline, 30.0),
            record("stable", "exact", Role::Baseline, 20.0),
            record("stable", "ours", Role::Evolved, 20.0),
        ];
        let text = render(&runs);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 6 + 1 + 1 + 2);
        assert!(lines[1].starts_with("stable") && lines[1].contains("exact"));
        assert!(lines[3].contains("ours"));
        assert!(lines[10].contains("-50.0%") && lines[10].contains("+100.0%"), "{}", lines[10]);
    }

    #[test]
    fn order_of_input_does_not_matter() {
        let a = record("t", "a", Role::Baseline, 1.0);
        let b = record("t", "b", Role::Evolved, 2.0);
        assert_eq!(render(&[a.clone(), b.clone()]), render(&[b, a]));
    }

    #[test]
    fn records_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = record("volatile", "greedy/periodic", Role::Baseline, 3.0);
        let path = r.write(dir.path()).unwrap();
        assert!(path.ends_with("volatile.greedy_periodic.run.json"));
        assert_eq!(load_runs(dir.path()).unwrap(), vec![r]);
    }
}
