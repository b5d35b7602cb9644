//! Listing and exporting bundled data: traces, seed genomes and catalogs.

use crate::inputs::{read_input, usage, write_output};
use anyhow::{anyhow, Context as _, Result};
use policylab_core::catalog::{parse_byte_quantity, Catalog};
use policylab_core::policy::{seed_by_name, seed_genomes, seed_names};
use policylab_core::traces::{bundled_trace, bundled_trace_names, transcription_audit, MANIFEST};
use serde_json::Value;
use std::fmt::Write as _;
use std::path::Path;

/// One line per bundled trace.
pub fn list_traces() -> Result<String> {
    let mut out = String::new();
    for name in bundled_trace_names() {
        let t = bundled_trace(name)?;
        let span = t.records.last().map(|r| r.t).unwrap_or(0.0);
        writeln!(out, "{:<20} {:>3} records  last t={:>6.0}s  {}", name, t.len(), span, t.note).unwrap();
    }
    Ok(out)
}

/// A bundled trace as its file text.
pub fn show_trace(name: &str) -> Result<String> {
    if !bundled_trace_names().contains(&name) {
        return Err(usage(format!("unknown bundled trace `{name}`")));
    }
    Ok(bundled_trace(name)?.to_json() + "\n")
}

/// Checks the bundled traces against the transcription manifest.
pub fn audit_traces() -> (String, bool) {
    let findings = transcription_audit();
    let mut out = String::new();
    for m in MANIFEST {
        let problems: Vec<_> = findings.iter().filter(|f| f.table == m.name).collect();
        let status = if problems.is_empty() { "ok" } else { "MISMATCH" };
        writeln!(out, "{:<24} {:>3} rows  {}", m.name, m.rows.len(), status).unwrap();
        for p in problems {
            writeln!(out, "  {}", p.problem).unwrap();
        }
    }
    (out, findings.is_empty())
}

/// One line per seed genome.
pub fn list_seeds() -> String {
    let mut out = String::new();
    for (name, g) in seed_names().iter().zip(seed_genomes()) {
        writeln!(out, "{:<32} {}", name, g.summary()).unwrap();
    }
    out
}

/// A seed genome as a genome file.
pub fn show_seed(name: &str) -> Result<String> {
    let g = seed_by_name(name).ok_or_else(|| usage(format!("unknown seed `{name}`")))?;
    Ok(g.to_canonical() + "\n")
}

/// GPU fields measured in bytes or bytes per second.
const BYTE_FIELDS: &[&str] = &[
    "mem_capacity_bytes",
    "hbm_bandwidth",
    "pcie_bandwidth",
    "intra_node_bandwidth",
    "inter_node_bandwidth",
];

/// Rewrites quantities such as `"80GB"` or `"900 GB/s"` in a catalog draft into plain numbers
/// and validates the result.
pub fn convert_catalog(text: &str) -> Result<Catalog> {
    let mut doc: Value = serde_json::from_str(text).context("catalog draft is not valid JSON")?;
    if let Some(gpus) = doc.get_mut("gpu_types").and_then(Value::as_array_mut) {
        for (i, gpu) in gpus.iter_mut().enumerate() {
            for field in BYTE_FIELDS {
                let Some(v) = gpu.get_mut(*field) else { continue };
                if let Some(s) = v.as_str() {
                    let bytes = parse_byte_quantity(s)
                        .ok_or_else(|| anyhow!("gpu_types[{i}].{field}: cannot parse quantity `{s}`"))?;
                    *v = serde_json::json!(bytes);
                }
            }
        }
    }
    let normalized = serde_json::to_string(&doc).expect("value serializes");
    Catalog::from_json(&normalized).context("converted catalog is invalid")
}

/// `catalog convert`: reads a draft and writes (or returns) the normalized catalog.
pub fn convert_catalog_file(input: &Path, output: Option<&Path>) -> Result<String> {
    let catalog = convert_catalog(&read_input(input)?)?;
    let json = catalog.to_json() + "\n";
    match output {
        Some(p) => {
            write_output(p, &json)?;
            Ok(format!("wrote {}\n", p.display()))
        }
        None => Ok(json),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_quantities_become_bytes() {
        let bundled = Catalog::bundled();
        let mut doc: Value = serde_json::from_str(&bundled.to_json()).unwrap();
        doc["gpu_types"][0]["mem_capacity_bytes"] = "80GB".into();
        doc["gpu_types"][0]["hbm_bandwidth"] = "3350 GB/s".into();
        let converted = convert_catalog(&doc.to_string()).unwrap();
        let gpu = &converted.gpu_types()[0];
        assert_eq!(gpu.mem_capacity_bytes, 80e9);
        assert_eq!(gpu.hbm_bandwidth, 3.35e12);
        assert_eq!(converted, bundled);
    }

    #[test]
    fn unparseable_quantity_names_the_field() {
        let mut doc: Value = serde_json::from_str(&Catalog::bundled().to_json()).unwrap();
        doc["gpu_types"][1]["pcie_bandwidth"] = "fast".into();
        let err = format!("{:#}", convert_catalog(&doc.to_string()).unwrap_err());
        assert!(err.contains("gpu_types[1].pcie_bandwidth"), "{err}");
    }

    #[test]
    fn listings_cover_bundled_data() {
        assert_eq!(list_traces().unwrap().lines().count(), bundled_trace_names().len());
        assert_eq!(list_seeds().lines().count(), seed_names().len());
        let (text, ok) = audit_traces();
        assert!(ok, "{text}");
    }
}
