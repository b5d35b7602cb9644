//! Resolution of command inputs: catalogs, traces, genomes, config files and run manifests.

use anyhow::{Context as _, Result};
use policylab_core::catalog::Catalog;
use policylab_core::policy::{seed_by_name, PolicyGenome};
use policylab_core::traces::{bundled_trace, bundled_trace_names, Trace};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// A mistake in how the command was invoked; exits with status 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Wraps a message as a [`UsageError`].
pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Reads a file the user named; a missing file is a usage error.
pub fn read_input(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(usage(format!("file not found: {}", path.display())));
    }
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// The bundled catalog, or the one at `path`.
pub fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        None => Ok(Catalog::bundled()),
        Some(p) => {
            let text = read_input(p)?;
            Catalog::from_json(&text).with_context(|| format!("invalid catalog {}", p.display()))
        }
    }
}

/// A bundled trace by name, or a trace file; validated against `catalog`.
pub fn load_trace(spec: &str, catalog: &Catalog) -> Result<Trace> {
    let trace = if bundled_trace_names().contains(&spec) {
        bundled_trace(spec)?
    } else {
        let path = Path::new(spec);
        if !path.exists() {
            return Err(usage(format!(
                "unknown trace `{spec}`: not a bundled trace name or an existing file"
            )));
        }
        let text = read_input(path)?;
        Trace::from_json(&text).with_context(|| format!("invalid trace {spec}"))?
    };
    trace
        .validate(Some(catalog))
        .with_context(|| format!("trace `{}` does not match the catalog", trace.id))?;
    Ok(trace)
}

/// A seed genome by name, or a genome file.
pub fn load_genome(spec: &str) -> Result<PolicyGenome> {
    if let Some(g) = seed_by_name(spec) {
        return Ok(g);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!(
            "unknown genome `{spec}`: not a seed name or an existing file"
        )));
    }
    let text = read_input(path)?;
    PolicyGenome::from_text(&text).with_context(|| format!("invalid genome {spec}"))
}

/// Parses a JSON config file, or returns the default when none is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = read_input(p)?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))
        }
    }
}

/// Creates the output directory.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Writes a file, naming it in the error.
pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// File-name-safe form of a label.
pub fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Everything needed to reproduce a run. Relative paths resolve against the manifest's
/// directory; trace and genome may also be bundled names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub catalog: Option<PathBuf>,
    pub trace: Option<String>,
    pub genome: Option<String>,
    pub config: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunManifest {
    /// Loads a manifest, resolves its paths and checks that referenced inputs exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_input(path)?;
        let raw: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(raw.resolve(base)?)
    }

    fn resolve(self, base: &Path) -> Result<Self> {
        let join = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let named = |s: String, is_name: bool| {
            if is_name || Path::new(&s).is_absolute() {
                s
            } else {
                base.join(&s).to_string_lossy().into_owned()
            }
        };
        let out = RunManifest {
            catalog: self.catalog.map(join),
            trace: self
                .trace
                .map(|t| {
                    let bundled = bundled_trace_names().contains(&t.as_str());
                    named(t, bundled)
                }),
            genome: self.genome.map(|g| {
                let seed = seed_by_name(&g).is_some();
                named(g, seed)
            }),
            config: self.config.map(join),
            output_dir: self.output_dir.map(join),
            seed: self.seed,
        };
        for file in [&out.catalog, &out.config].into_iter().flatten() {
            if !file.exists() {
                return Err(usage(format!("manifest references a missing file: {}", file.display())));
            }
        }
        Ok(out)
    }

    /// The manifest at `path`, or an empty one.
    pub fn optional(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }
}

/// Picks the flag value, then the manifest value, else reports the missing flag.
pub fn required<T>(flag: Option<T>, manifest: Option<T>, name: &str) -> Result<T> {
    flag.or(manifest)
        .ok_or_else(|| usage(format!("missing required input: --{name} (or `{name}` in the manifest)")))
}
