//! Hardware and model registry plus static model properties.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

const BUNDLED_CATALOG: &str = include_str!("../data/catalog.json");

/// Errors raised while loading or validating a catalog.
#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog has no entries")]
    NoEntries,
    #[error("catalog parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}` in entry `{entry}`: {reason}")]
    InvalidField {
        entry: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate {kind} name `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("catalog io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for CatalogError {
    fn from(err: serde_json::Error) -> Self {
        CatalogError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// A GPU type with its capacity, throughput and interconnect characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuType {
    pub name: String,
    /// Device memory in bytes (m_g).
    pub mem_capacity_bytes: f64,
    /// Peak FP16 throughput in FLOP/s (F_g).
    pub peak_fp16_flops: f64,
    /// HBM bandwidth in bytes/s (B_g).
    pub hbm_bandwidth: f64,
    /// Host-to-device bandwidth in bytes/s (P_g).
    pub pcie_bandwidth: f64,
    /// GPUs per node (ν_g).
    pub gpus_per_node: u32,
    pub intra_node_bandwidth: f64,
    pub inter_node_bandwidth: f64,
    /// Physical device count (κ_g).
    pub total_count: u32,
}

fn default_pcie_coeff() -> f64 {
    1.0
}

/// A transformer model shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: u64,
    pub hidden_dim: u64,
    pub intermediate_dim: u64,
    pub vocab_size: u64,
    pub attn_heads: u64,
    pub kv_heads: u64,
    pub head_dim: u64,
    pub precision_bits: u32,
    /// Weight-transfer coefficient (c_z).
    #[serde(default = "default_pcie_coeff")]
    pub pcie_coeff: f64,
}

impl GpuType {
    /// Checks the type invariants.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let positive = [
            ("mem_capacity_bytes", self.mem_capacity_bytes),
            ("peak_fp16_flops", self.peak_fp16_flops),
            ("hbm_bandwidth", self.hbm_bandwidth),
            ("pcie_bandwidth", self.pcie_bandwidth),
            ("intra_node_bandwidth", self.intra_node_bandwidth),
            ("inter_node_bandwidth", self.inter_node_bandwidth),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(self.invalid(field, format!("must be finite and > 0, got {value}")));
            }
        }
        if self.gpus_per_node < 1 {
            return Err(self.invalid("gpus_per_node", "must be >= 1".into()));
        }
        Ok(())
    }

    fn invalid(&self, field: &'static str, reason: String) -> CatalogError {
        CatalogError::InvalidField {
            entry: self.name.clone(),
            field,
            reason,
        }
    }
}

impl ModelSpec {
    /// Checks the type invariants.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let nonzero = [
            ("layers", self.layers),
            ("hidden_dim", self.hidden_dim),
            ("intermediate_dim", self.intermediate_dim),
            ("vocab_size", self.vocab_size),
            ("attn_heads", self.attn_heads),
            ("kv_heads", self.kv_heads),
            ("head_dim", self.head_dim),
        ];
        for (field, value) in nonzero {
            if value == 0 {
                return Err(self.invalid(field, "must be >= 1".into()));
            }
        }
        if self.kv_heads > self.attn_heads {
            return Err(self.invalid(
                "kv_heads",
                format!("{} exceeds attn_heads {}", self.kv_heads, self.attn_heads),
            ));
        }
        if self.head_dim * self.attn_heads != self.hidden_dim {
            return Err(self.invalid(
                "head_dim",
                format!(
                    "head_dim {} x attn_heads {} != hidden_dim {}",
                    self.head_dim, self.attn_heads, self.hidden_dim
                ),
            ));
        }
        if !matches!(self.precision_bits, 8 | 16 | 32) {
            return Err(self.invalid(
                "precision_bits",
                format!("must be 8, 16 or 32, got {}", self.precision_bits),
            ));
        }
        if !(self.pcie_coeff.is_finite() && self.pcie_coeff >= 1.0) {
            return Err(self.invalid("pcie_coeff", format!("must be >= 1, got {}", self.pcie_coeff)));
        }
        Ok(())
    }

    fn invalid(&self, field: &'static str, reason: String) -> CatalogError {
        CatalogError::InvalidField {
            entry: self.name.clone(),
            field,
            reason,
        }
    }

    /// Bytes per element.
    pub fn element_bytes(&self) -> f64 {
        self.precision_bits as f64 / 8.0
    }
}

/// Total weight footprint in bytes: `[L(3HI + 2AHd + 2KHd) + 2HV] * η/8`.
pub fn weight_size(model: &ModelSpec) -> u64 {
    let l = model.layers as u128;
    let h = model.hidden_dim as u128;
    let i = model.intermediate_dim as u128;
    let v = model.vocab_size as u128;
    let a = model.attn_heads as u128;
    let k = model.kv_heads as u128;
    let d = model.head_dim as u128;
    let params = l * (3 * h * i + 2 * a * h * d + 2 * k * h * d) + 2 * h * v;
    (params * model.precision_bits as u128 / 8) as u64
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    gpu_types: Vec<GpuType>,
    #[serde(default)]
    models: Vec<ModelSpec>,
}

/// An immutable, validated set of GPU types and models.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    gpu_types: Vec<GpuType>,
    models: Vec<ModelSpec>,
    gpu_index: BTreeMap<String, usize>,
    model_index: BTreeMap<String, usize>,
}

impl Catalog {
    /// Builds a catalog, validating every entry and rejecting duplicate names.
    pub fn new(gpu_types: Vec<GpuType>, models: Vec<ModelSpec>) -> Result<Self, CatalogError> {
        if gpu_types.is_empty() && models.is_empty() {
            return Err(CatalogError::NoEntries);
        }
        let mut gpu_index = BTreeMap::new();
        for (idx, gpu) in gpu_types.iter().enumerate() {
            gpu.validate()?;
            if gpu_index.insert(gpu.name.clone(), idx).is_some() {
                return Err(CatalogError::Duplicate {
                    kind: "gpu type",
                    name: gpu.name.clone(),
                });
            }
        }
        let mut model_index = BTreeMap::new();
        for (idx, model) in models.iter().enumerate() {
            model.validate()?;
            if model_index.insert(model.name.clone(), idx).is_some() {
                return Err(CatalogError::Duplicate {
                    kind: "model",
                    name: model.name.clone(),
                });
            }
        }
        Ok(Self {
            gpu_types,
            models,
            gpu_index,
            model_index,
        })
    }

    /// Parses a catalog document.
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        if text.trim().is_empty() {
            return Err(CatalogError::NoEntries);
        }
        let file: CatalogFile = serde_json::from_str(text)?;
        Self::new(file.gpu_types, file.models)
    }

    /// Serializes to the catalog document format.
    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            gpu_types: self.gpu_types.clone(),
            models: self.models.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serialization is infallible")
    }

    /// The catalog shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn gpu_types(&self) -> &[GpuType] {
        &self.gpu_types
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn gpu(&self, name: &str) -> Option<&GpuType> {
        self.gpu_index.get(name).map(|&i| &self.gpu_types[i])
    }

    pub fn model(&self, name: &str) -> Option<&ModelSpec> {
        self.model_index.get(name).map(|&i| &self.models[i])
    }

    pub fn require_gpu(&self, name: &str) -> Result<&GpuType, CatalogError> {
        self.gpu(name).ok_or_else(|| CatalogError::Unknown {
            kind: "gpu type",
            name: name.to_string(),
        })
    }

    pub fn require_model(&self, name: &str) -> Result<&ModelSpec, CatalogError> {
        self.model(name).ok_or_else(|| CatalogError::Unknown {
            kind: "model",
            name: name.to_string(),
        })
    }

    /// Names of all GPU types in sorted order.
    pub fn gpu_names(&self) -> BTreeSet<String> {
        self.gpu_index.keys().cloned().collect()
    }
}

/// Loads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let text = std::fs::read_to_string(path)?;
    Catalog::from_json(&text)
}

/// Converts a quantity such as `80GB`, `900 GB/s` or `1.5TiB` into bytes (or bytes/s).
pub fn parse_byte_quantity(text: &str) -> Option<f64> {
    let cleaned = text.trim().trim_end_matches("/s").trim();
    let split = cleaned
        .find(|c: char| c.is_ascii_alphabetic())
        .unwrap_or(cleaned.len());
    let (number, unit) = cleaned.split_at(split);
    let value: f64 = number.trim().parse().ok()?;
    let scale = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1.0,
        "KB" => 1e3,
        "MB" => 1e6,
        "GB" => 1e9,
        "TB" => 1e12,
        "KIB" => 1024.0,
        "MIB" => 1024.0_f64.powi(2),
        "GIB" => 1024.0_f64.powi(3),
        "TIB" => 1024.0_f64.powi(4),
        _ => return None,
    };
    Some(value * scale)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn toy_model() -> ModelSpec {
        ModelSpec {
            name: "toy".into(),
            layers: 2,
            hidden_dim: 4,
            intermediate_dim: 8,
            vocab_size: 10,
            attn_heads: 2,
            kv_heads: 2,
            head_dim: 2,
            precision_bits: 16,
            pcie_coeff: 1.0,
        }
    }

    #[test]
    fn toy_weight_size_matches_hand_expansion() {
        // 3HI = 96, 2AHd = 32, 2KHd = 32, per layer 160, x2 layers = 320, 2HV = 80, 400 params x 2 bytes
        assert_eq!(weight_size(&toy_model()), 800);
    }

    #[test]
    fn llama_8b_weight_size_golden() {
        let m = ModelSpec {
            name: "llama".into(),
            layers: 32,
            hidden_dim: 4096,
            intermediate_dim: 14336,
            vocab_size: 128256,
            attn_heads: 32,
            kv_heads: 8,
            head_dim: 128,
            precision_bits: 16,
            pcie_coeff: 1.0,
        };
        assert_eq!(weight_size(&m), 16_059_990_016);
    }

    #[test]
    fn bundled_catalog_has_three_gpu_types() {
        let cat = Catalog::bundled();
        assert_eq!(cat.gpu_types().len(), 3);
        for name in ["H100-SXM", "H200-SXM", "A100-80GB"] {
            assert!(cat.gpu(name).is_some(), "{name}");
        }
        let h100 = cat.gpu("H100-SXM").unwrap();
        assert_eq!(h100.mem_capacity_bytes, 80e9);
        assert_eq!(h100.pcie_bandwidth, 64e9);
        assert_eq!(h100.intra_node_bandwidth, 900e9);
    }

    #[test]
    fn empty_file_reports_no_entries() {
        assert!(matches!(Catalog::from_json(""), Err(CatalogError::NoEntries)));
        assert!(matches!(Catalog::from_json("{}"), Err(CatalogError::NoEntries)));
    }

    #[test]
    fn kv_heads_above_attn_heads_is_rejected() {
        let mut m = toy_model();
        m.kv_heads = 3;
        let err = Catalog::new(vec![], vec![m]).unwrap_err();
        assert!(matches!(err, CatalogError::InvalidField { field: "kv_heads", .. }), "{err}");
    }

    #[test]
    fn zero_precision_is_rejected() {
        let mut m = toy_model();
        m.precision_bits = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Catalog::new(vec![], vec![toy_model(), toy_model()]).unwrap_err();
        assert!(matches!(err, CatalogError::Duplicate { .. }));
    }

    #[test]
    fn parse_error_carries_location() {
        let err = Catalog::from_json("{\n  \"models\": [ {\"name\": 3} ]\n}").unwrap_err();
        match err {
            CatalogError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn pcie_coeff_defaults_to_one() {
        let text = r#"{"models":[{"name":"m","layers":1,"hidden_dim":4,"intermediate_dim":4,
            "vocab_size":4,"attn_heads":2,"kv_heads":1,"head_dim":2,"precision_bits":16}]}"#;
        let cat = Catalog::from_json(text).unwrap();
        assert_eq!(cat.model("m").unwrap().pcie_coeff, 1.0);
    }

    #[test]
    fn byte_quantities() {
        assert_eq!(parse_byte_quantity("80GB"), Some(80e9));
        assert_eq!(parse_byte_quantity("900 GB/s"), Some(900e9));
        assert_eq!(parse_byte_quantity("12"), Some(12.0));
        assert_eq!(parse_byte_quantity("1KiB"), Some(1024.0));
        assert_eq!(parse_byte_quantity("3 parsecs"), None);
    }

    #[test]
    fn round_trip() {
        let cat = Catalog::bundled();
        assert_eq!(Catalog::from_json(&cat.to_json()).unwrap(), cat);
    }
}
