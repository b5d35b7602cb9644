//! Trace data model, file format, bundled traces and a synthetic phase generator.

use crate::catalog::Catalog;
use crate::plan::{ClusterState, ModelWorkload, WorkloadSnapshot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

/// Trace loading and validation failures.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace file: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
    #[error("trace has no records")]
    Empty,
    #[error("unknown bundled trace `{0}`")]
    UnknownTrace(String),
}

/// One monitoring point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    /// Seconds since trace start.
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    pub workloads: WorkloadSnapshot,
    pub cluster: ClusterState,
}

/// A time-ordered sequence of workload and cluster observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trace {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// Checks ordering and, when a catalog is given, that every name resolves.
    pub fn validate(&self, catalog: Option<&Catalog>) -> Result<(), TraceError> {
        if self.records.is_empty() {
            return Err(TraceError::Empty);
        }
        let mut prev = f64::NEG_INFINITY;
        for (index, r) in self.records.iter().enumerate() {
            let fail = |reason: String| TraceError::Record { index, reason };
            if !r.t.is_finite() || r.t < 0.0 {
                return Err(fail(format!("time {} must be finite and >= 0", r.t)));
            }
            if r.t <= prev {
                return Err(fail(format!("time {} does not increase past {prev}", r.t)));
            }
            prev = r.t;
            for (model, w) in &r.workloads {
                if w.batch > 0 && (w.cap == 0 || w.decode == 0 && w.prefill == 0) {
                    return Err(fail(format!("model {model}: cap must be >= 1 and some tokens requested")));
                }
                if let Some(c) = catalog {
                    if c.model(model).is_none() {
                        return Err(fail(format!("unknown model `{model}`")));
                    }
                }
            }
            if let Some(c) = catalog {
                for gpu in r.cluster.0.keys() {
                    if c.gpu(gpu).is_none() {
                        return Err(fail(format!("unknown GPU type `{gpu}`")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization is infallible")
    }

    /// Parses a trace document, reporting the index of the first malformed record.
    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| TraceError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if let Some(records) = value.get("records").and_then(|r| r.as_array()) {
            for (index, r) in records.iter().enumerate() {
                if let Err(e) = TraceRecord::deserialize(r) {
                    return Err(TraceError::Record {
                        index,
                        reason: e.to_string(),
                    });
                }
            }
        }
        let trace: Trace = serde_json::from_value(value).map_err(|e| TraceError::Parse {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        trace.validate(None)?;
        Ok(trace)
    }

    /// A copy whose record times are scaled so consecutive records sit `seconds` apart
    /// on average, preserving relative spacing.
    pub fn with_spacing(&self, seconds: f64) -> Trace {
        let mut out = self.clone();
        if self.records.len() < 2 {
            return out;
        }
        let first = self.records[0].t;
        let span = self.records.last().map(|r| r.t).unwrap_or(first) - first;
        let scale = seconds * (self.records.len() - 1) as f64 / span;
        for r in &mut out.records {
            r.t = (r.t - first) * scale;
        }
        out
    }

    /// The contiguous sub-trace of records `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Trace {
        Trace {
            id: self.id.clone(),
            note: self.note.clone(),
            records: self.records[range].to_vec(),
        }
    }
}

/// Reads and validates a trace file.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let text = std::fs::read_to_string(path)?;
    Trace::from_json(&text)
}

/// Writes a trace file.
pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    std::fs::write(path, trace.to_json() + "\n")?;
    Ok(())
}

const BUNDLED: [(&str, &str); 8] = [
    ("motivation-shifting", include_str!("../data/traces/motivation-shifting.json")),
    ("motivation-hybrid", include_str!("../data/traces/motivation-hybrid.json")),
    ("stable-workload", include_str!("../data/traces/stable-workload.json")),
    ("volatile-workload", include_str!("../data/traces/volatile-workload.json")),
    ("elastic-stable", include_str!("../data/traces/elastic-stable.json")),
    ("elastic-volatile", include_str!("../data/traces/elastic-volatile.json")),
    ("maf-trace-1", include_str!("../data/traces/maf-trace-1.json")),
    ("maf-trace-2", include_str!("../data/traces/maf-trace-2.json")),
];

/// Names of the bundled traces.
pub fn bundled_trace_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

/// One bundled trace by name.
pub fn bundled_trace(name: &str) -> Result<Trace, TraceError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| TraceError::UnknownTrace(name.to_string()))?;
    Trace::from_json(text)
}

/// All bundled traces, in a fixed order.
pub fn bundled_traces() -> Vec<Trace> {
    BUNDLED
        .iter()
        .map(|(n, _)| bundled_trace(n).expect("bundled traces are valid"))
        .collect()
}

/// A transcribed source table: column labels, integer cells, and a checksum of both.
#[derive(Debug, Clone, Copy)]
pub struct TableManifest {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    pub rows: &'static [&'static [u32]],
    pub sha256: &'static str,
}

impl TableManifest {
    /// Canonical rendering that the checksum covers.
    pub fn render(&self) -> String {
        let mut s = format!("{}\n{}\n", self.name, self.columns.join(","));
        for row in self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

const SIX: &[&str] = &[
    "Qwen2.5-1.5B",
    "Qwen2.5-3B",
    "Qwen2.5-7B",
    "Qwen2.5-14B",
    "Qwen2.5-32B",
    "Qwen2.5-72B",
];
const HEAVY: &[u32] = &[64, 64, 64, 384, 256, 128];
const LIGHT: &[u32] = &[960, 480, 288, 64, 32, 16];
const GPUS: &[&str] = &["A100-80GB", "H100-SXM", "H200-SXM"];

/// Transcribed batch, cluster and schedule tables backing the bundled traces.
pub const MANIFEST: &[TableManifest] = &[
    TableManifest {
        name: "motivation-shifting",
        columns: SIX,
        rows: &[HEAVY, LIGHT, HEAVY],
        sha256: "0726f89bca6fcd76f9a74c312770768f8aea6bbdfcd16746cc06c31e7c3df12e",
    },
    TableManifest {
        name: "motivation-hybrid",
        columns: SIX,
        rows: &[LIGHT, &[968, 476, 284, 64, 32, 16], HEAVY, &[72, 64, 64, 400, 256, 128], HEAVY],
        sha256: "c474bf21c5854769ebe32683aab432a15d72ce1ff2e43a9f9173fb88d450a289",
    },
    TableManifest {
        name: "volatile-workload",
        columns: SIX,
        rows: &[
            HEAVY,
            &[80, 64, 64, 400, 256, 128],
            HEAVY,
            LIGHT,
            &[1008, 480, 336, 64, 32, 16],
            LIGHT,
            &[96, 64, 64, 416, 256, 128],
            HEAVY,
            &[80, 64, 64, 400, 256, 128],
            LIGHT,
        ],
        sha256: "dd8749174d36210e93fbdf36e741e164cf9d5331ea0f7748689b83c858ab927c",
    },
    TableManifest {
        name: "stable-workload",
        columns: &["Qwen2.5-1.5B", "Qwen2.5-3B", "Qwen2.5-7B"],
        rows: &[
            &[960, 480, 288],
            &[1008, 476, 284],
            &[952, 484, 264],
            &[960, 480, 290],
            &[968, 544, 286],
            &[956, 478, 288],
            &[962, 482, 336],
            &[958, 479, 287],
            &[1008, 481, 285],
            &[964, 483, 291],
        ],
        sha256: "b6b75b3cea78e585f9e14bd763a4c8082e89d562b84d48979733d452cc7b497a",
    },
    TableManifest {
        name: "elastic-stable",
        columns: GPUS,
        rows: &[&[0, 16, 16], &[0, 16, 24], &[0, 24, 24], &[16, 16, 8], &[8, 24, 16]],
        sha256: "365a6cb72e8f3344172d68b85fea9dc1e0f60fe1762eb31d95ba048296c7b9b7",
    },
    TableManifest {
        name: "elastic-volatile",
        columns: GPUS,
        rows: &[&[8, 16, 16], &[0, 8, 24], &[16, 24, 8], &[16, 40, 8], &[8, 24, 16]],
        sha256: "5496fd0c62c14450b8c0a7c0fc2ec331aadf4ce263d578b3689f54bebbb918e0",
    },
    TableManifest {
        name: "elastic-schedule",
        columns: &["start", "end", "gpus"],
        rows: &[
            &[0, 3, 24],
            &[3, 6, 25],
            &[6, 9, 26],
            &[9, 12, 27],
            &[12, 15, 29],
            &[15, 18, 30],
            &[18, 21, 32],
            &[21, 24, 33],
            &[24, 27, 36],
            &[27, 30, 38],
            &[30, 33, 42],
            &[33, 36, 45],
            &[36, 39, 48],
            &[39, 42, 51],
            &[42, 45, 54],
            &[45, 48, 55],
            &[48, 54, 60],
            &[54, 57, 63],
            &[57, 60, 62],
            &[60, 63, 64],
            &[63, 66, 61],
            &[66, 69, 62],
            &[69, 75, 60],
            &[75, 78, 57],
            &[78, 81, 56],
            &[81, 87, 54],
            &[87, 90, 55],
            &[90, 93, 53],
            &[93, 96, 51],
            &[96, 99, 50],
            &[99, 105, 49],
            &[105, 108, 47],
            &[108, 114, 45],
            &[114, 117, 44],
            &[117, 120, 43],
        ],
        sha256: "1279a0d00ec7ef1f1acfcca474ef7c4e35d0ef5e50a64403ab9c76a51c42f091",
    },
    TableManifest {
        name: "maf-trace-1",
        columns: &["prefill", "decode"],
        rows: &[&[512, 1024], &[2048, 256], &[4096, 128], &[2048, 256]],
        sha256: "95bc7b72163b6d56739abea69243d968f8a0e2184d12309e126cf9ccb6b10c1c",
    },
    TableManifest {
        name: "maf-trace-2",
        columns: &["prefill", "decode"],
        rows: &[&[4096, 128], &[2048, 256], &[512, 1024], &[2048, 256]],
        sha256: "ef671463d7e1c1c83bdccc58417f9840a2d68917c7ca2377e20ba99ba7b117f3",
    },
];

/// Result of checking one manifest table against the bundled data.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditFinding {
    pub table: &'static str,
    pub problem: String,
}

fn manifest(name: &str) -> &'static TableManifest {
    MANIFEST.iter().find(|m| m.name == name).expect("manifest entry exists")
}

/// GPU count of the shared elastic schedule at time `t`.
pub fn elastic_schedule_size(t: f64) -> Option<u32> {
    manifest("elastic-schedule")
        .rows
        .iter()
        .find(|r| (r[0] as f64) <= t && t < r[1] as f64)
        .map(|r| r[2])
}

/// Verifies every manifest checksum and every bundled cell it describes.
pub fn transcription_audit() -> Vec<AuditFinding> {
    let mut findings = Vec::new();
    for m in MANIFEST {
        if m.checksum() != m.sha256 {
            findings.push(AuditFinding {
                table: m.name,
                problem: format!("checksum {} != recorded {}", m.checksum(), m.sha256),
            });
        }
    }
    let mut check = |table: &'static str, ok: bool, problem: String| {
        if !ok {
            findings.push(AuditFinding { table, problem });
        }
    };
    for name in ["motivation-shifting", "motivation-hybrid", "volatile-workload", "stable-workload"] {
        let m = manifest(name);
        let trace = bundled_trace(name).expect("bundled");
        check(m.name, trace.len() == m.rows.len(), format!("{} records vs {} rows", trace.len(), m.rows.len()));
        for (i, (rec, row)) in trace.records.iter().zip(m.rows).enumerate() {
            for (model, &batch) in m.columns.iter().zip(row.iter()) {
                let got = rec.workloads.get(*model).map(|w| w.batch);
                check(m.name, got == Some(batch), format!("ts{i} {model}: {got:?} != {batch}"));
            }
        }
    }
    for name in ["elastic-stable", "elastic-volatile"] {
        let m = manifest(name);
        let trace = bundled_trace(name).expect("bundled");
        check(m.name, trace.len() == m.rows.len(), format!("{} records vs {} rows", trace.len(), m.rows.len()));
        for (i, (rec, row)) in trace.records.iter().zip(m.rows).enumerate() {
            for (gpu, &count) in m.columns.iter().zip(row.iter()) {
                let got = rec.cluster.available(gpu);
                check(m.name, got == count, format!("ts{i} {gpu}: {got} != {count}"));
            }
        }
    }
    for name in ["maf-trace-1", "maf-trace-2"] {
        let m = manifest(name);
        let trace = bundled_trace(name).expect("bundled");
        check(m.name, trace.len() == 40, format!("{} records, expected 40 buckets", trace.len()));
        for (k, rec) in trace.records.iter().enumerate() {
            let expected = elastic_schedule_size(rec.t);
            let got = Some(rec.cluster.total() as u32);
            check("elastic-schedule", got == expected, format!("t={} size {got:?} != {expected:?}", rec.t));
            let row = m.rows[(k * m.rows.len() / trace.len().max(1)).min(m.rows.len() - 1)];
            for w in rec.workloads.values() {
                check(
                    m.name,
                    w.prefill == row[0] && w.decode == row[1],
                    format!("record {k}: ({}, {}) != ({}, {})", w.prefill, w.decode, row[0], row[1]),
                );
            }
        }
    }
    findings
}

/// One phase of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub label: String,
    pub workloads: WorkloadSnapshot,
    pub cluster: ClusterState,
    pub duration_seconds: f64,
}

/// Generator input: phases, sampling cadence and bounded multiplicative batch jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub id: String,
    pub phases: Vec<PhaseSpec>,
    pub step_seconds: f64,
    /// Relative batch jitter bound, in [0, 1).
    pub jitter: f64,
    pub seed: u64,
}

/// Builds a piecewise trace: one record every `step_seconds` over the summed phase durations,
/// each batch scaled by a factor drawn uniformly from `[1 − jitter, 1 + jitter]`.
pub fn generate_phase_trace(spec: &GeneratorSpec) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    let mut phase_start = 0.0;
    for phase in &spec.phases {
        let end = phase_start + phase.duration_seconds;
        let mut k = (phase_start / spec.step_seconds).ceil() as u64;
        loop {
            let t = k as f64 * spec.step_seconds;
            if t >= end {
                break;
            }
            let workloads = phase
                .workloads
                .iter()
                .map(|(name, w)| {
                    let factor = if spec.jitter > 0.0 {
                        rng.gen_range(1.0 - spec.jitter..=1.0 + spec.jitter)
                    } else {
                        1.0
                    };
                    let batch = if w.batch == 0 {
                        0
                    } else {
                        ((w.batch as f64 * factor).round() as u32).max(1)
                    };
                    (name.clone(), ModelWorkload { batch, ..*w })
                })
                .collect();
            records.push(TraceRecord {
                t,
                phase: Some(phase.label.clone()),
                workloads,
                cluster: phase.cluster.clone(),
            });
            k += 1;
        }
        phase_start = end;
    }
    Trace {
        id: spec.id.clone(),
        note: format!(
            "synthetic: {} phases, step {} s, jitter {}, seed {}",
            spec.phases.len(),
            spec.step_seconds,
            spec.jitter,
            spec.seed
        ),
        records,
    }
}

/// A copy of `trace` with every batch scaled by an independent factor in `[1 − jitter, 1 + jitter]`.
pub fn jitter_trace(trace: &Trace, jitter: f64, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = trace.clone();
    for r in &mut out.records {
        for w in r.workloads.values_mut() {
            if w.batch > 0 && jitter > 0.0 {
                let f: f64 = rng.gen_range(1.0 - jitter..=1.0 + jitter);
                w.batch = ((w.batch as f64 * f).round() as u32).max(1);
            }
        }
    }
    out
}
