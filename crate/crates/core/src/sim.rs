//! Analytical roofline cost engine: operator latency, serve latency with tensor-parallel
//! communication, memory feasibility, weight transfer and reconfiguration cost.

use crate::catalog::{weight_size, Catalog, GpuType, ModelSpec};
use crate::plan::{footprint, ServingPlan};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

/// Decode lengths up to this value are summed token by token in [`DecodeSum::Auto`] mode.
pub const EXACT_DECODE_LIMIT: u64 = 4096;

/// Simulator errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("roofline domain error: {0}")]
    Domain(String),
    #[error("shape error: tp {tp} does not divide attention heads {heads} of `{model}`")]
    Shape { model: String, tp: u32, heads: u64 },
}

/// How the per-token decode sum is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecodeSum {
    /// Token-by-token up to [`EXACT_DECODE_LIMIT`], closed form above it.
    #[default]
    Auto,
    Exact,
    ClosedForm,
}

/// Simulator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// θ: fraction of device memory available to weights.
    pub mem_utilization_threshold: f64,
    /// Λ_∞: latency charged to infeasible or uncovered placements.
    pub infeasible_penalty_seconds: f64,
    /// Cap on the stale-serving slowdown ratio.
    pub max_stale_slowdown: f64,
    pub decode_sum: DecodeSum,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mem_utilization_threshold: 0.8,
            infeasible_penalty_seconds: 1.0e9,
            max_stale_slowdown: 10.0,
            decode_sum: DecodeSum::Auto,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let theta = self.mem_utilization_threshold;
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(format!("mem_utilization_threshold must be in (0, 1], got {theta}"));
        }
        if !(self.infeasible_penalty_seconds > 0.0 && self.infeasible_penalty_seconds.is_finite()) {
            return Err("infeasible_penalty_seconds must be finite and > 0".into());
        }
        if !(self.max_stale_slowdown >= 0.0) {
            return Err("max_stale_slowdown must be >= 0".into());
        }
        Ok(())
    }
}

/// Roofline operator time: `F / min((F/A)·B, F_peak)`.
pub fn roofline_time(flops: f64, bytes_accessed: f64, gpu: &GpuType) -> Result<f64, SimError> {
    if !(bytes_accessed > 0.0) {
        return Err(SimError::Domain(format!(
            "bytes_accessed must be > 0, got {bytes_accessed}"
        )));
    }
    if !(flops > 0.0) {
        return Err(SimError::Domain(format!("flops must be > 0, got {flops}")));
    }
    let intensity = flops / bytes_accessed;
    Ok(flops / (intensity * gpu.hbm_bandwidth).min(gpu.peak_fp16_flops))
}

/// Operator time that also accepts zero-FLOP operators (pure data movement).
fn op_time(flops: f64, bytes: f64, gpu: &GpuType) -> f64 {
    if flops > 0.0 && bytes > 0.0 {
        flops / ((flops / bytes) * gpu.hbm_bandwidth).min(gpu.peak_fp16_flops)
    } else if bytes > 0.0 {
        bytes / gpu.hbm_bandwidth
    } else {
        flops.max(0.0) / gpu.peak_fp16_flops
    }
}

/// Ring all-reduce time for one phase across all layers.
pub fn allreduce_time(model: &ModelSpec, gpu: &GpuType, tp: u32, batch: u64, seq_len: u64) -> f64 {
    if tp <= 1 {
        return 0.0;
    }
    let t = tp as f64;
    let bandwidth = if tp <= gpu.gpus_per_node {
        gpu.intra_node_bandwidth
    } else {
        gpu.inter_node_bandwidth
    };
    let volume = 2.0
        * model.layers as f64
        * model.hidden_dim as f64
        * batch as f64
        * seq_len as f64
        * model.element_bytes();
    (2.0 * (t - 1.0) / t) * volume / bandwidth
}

/// Per-shard dimensions for one (model, tp) pair.
struct Shard {
    layers: f64,
    hidden: f64,
    inter: f64,
    attn: f64,
    kv: f64,
    vocab: f64,
    elem: f64,
}

impl Shard {
    fn new(model: &ModelSpec, tp: u32) -> Self {
        let t = tp as f64;
        Self {
            layers: model.layers as f64,
            hidden: model.hidden_dim as f64,
            inter: model.intermediate_dim as f64 / t,
            attn: (model.attn_heads * model.head_dim) as f64 / t,
            kv: (model.kv_heads * model.head_dim) as f64 / t,
            vocab: model.vocab_size as f64 / t,
            elem: model.element_bytes(),
        }
    }

    /// Matmul of `m×k` activations by a `k×n` weight: weights once, activations read and written.
    fn dense(&self, m: f64, k: f64, n: f64, gpu: &GpuType) -> f64 {
        let flops = 2.0 * m * k * n;
        let bytes = (k * n + m * k + m * n) * self.elem;
        op_time(flops, bytes, gpu)
    }

    /// Per-layer time of everything except attention score/value application.
    fn projections(&self, tokens: f64, gpu: &GpuType) -> f64 {
        let h = self.hidden;
        self.dense(tokens, h, self.attn + 2.0 * self.kv, gpu)
            + self.dense(tokens, self.attn, h, gpu)
            + 2.0 * self.dense(tokens, h, self.inter, gpu)
            + self.dense(tokens, self.inter, h, gpu)
    }

    /// Attention FLOPs and bytes for `batch` sequences of `q` new tokens over `context` positions.
    fn attention_cost(&self, batch: f64, q: f64, context: f64) -> (f64, f64) {
        let flops = 4.0 * batch * q * context * self.attn;
        let bytes = (2.0 * self.kv * context * batch + 2.0 * batch * q * self.attn) * self.elem;
        (flops, bytes)
    }

    fn attention(&self, batch: f64, q: f64, context: f64, gpu: &GpuType) -> f64 {
        let (flops, bytes) = self.attention_cost(batch, q, context);
        op_time(flops, bytes, gpu)
    }

    fn lm_head(&self, batch: f64, gpu: &GpuType) -> f64 {
        self.dense(batch, self.hidden, self.vocab, gpu)
    }
}

/// Serve latency split into phases.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub prefill_compute: f64,
    pub prefill_allreduce: f64,
    pub decode_compute: f64,
    pub decode_allreduce: f64,
}

impl LatencyBreakdown {
    pub fn total(&self) -> f64 {
        self.prefill_compute + self.prefill_allreduce + self.decode_compute + self.decode_allreduce
    }
}

fn check_shape(model: &ModelSpec, tp: u32) -> Result<(), SimError> {
    if tp == 0 || model.attn_heads % tp as u64 != 0 {
        return Err(SimError::Shape {
            model: model.name.clone(),
            tp,
            heads: model.attn_heads,
        });
    }
    Ok(())
}

/// Sum over `k ∈ [lo, hi]` of `max(a0 + a1·k, b1·k)`, split at the crossing point.
fn sum_max_linear(a0: f64, a1: f64, b1: f64, lo: u64, hi: u64) -> f64 {
    fn linear_sum(c0: f64, c1: f64, lo: u64, hi: u64) -> f64 {
        if hi < lo {
            return 0.0;
        }
        let n = (hi - lo + 1) as f64;
        c0 * n + c1 * (lo as f64 + hi as f64) * n / 2.0
    }
    if hi < lo {
        return 0.0;
    }
    if b1 <= a1 {
        return linear_sum(a0, a1, lo, hi);
    }
    let crossing = a0 / (b1 - a1);
    let last_memory = crossing.floor();
    if last_memory < lo as f64 {
        return linear_sum(0.0, b1, lo, hi);
    }
    if last_memory >= hi as f64 {
        return linear_sum(a0, a1, lo, hi);
    }
    let split = last_memory as u64;
    linear_sum(a0, a1, lo, split) + linear_sum(0.0, b1, split + 1, hi)
}

/// Serve latency with phase breakdown under an explicit decode-sum mode.
pub fn serve_latency_breakdown(
    model: &ModelSpec,
    gpu: &GpuType,
    tp: u32,
    batch: u64,
    prefill_len: u64,
    decode_len: u64,
    mode: DecodeSum,
) -> Result<LatencyBreakdown, SimError> {
    check_shape(model, tp)?;
    let shard = Shard::new(model, tp);
    let b = batch as f64;
    let mut out = LatencyBreakdown::default();

    if prefill_len > 0 {
        let sp = prefill_len as f64;
        let tokens = b * sp;
        let layer = shard.projections(tokens, gpu) + shard.attention(b, sp, sp, gpu);
        out.prefill_compute = shard.layers * layer + shard.lm_head(b, gpu);
        out.prefill_allreduce = allreduce_time(model, gpu, tp, batch, prefill_len);
    }

    if decode_len > 0 {
        let per_step_fixed = shard.layers * shard.projections(b, gpu) + shard.lm_head(b, gpu);
        let per_step_allreduce = allreduce_time(model, gpu, tp, batch, 1);
        let first = prefill_len;
        let last = prefill_len + decode_len - 1;
        let exact = match mode {
            DecodeSum::Exact => true,
            DecodeSum::ClosedForm => false,
            DecodeSum::Auto => decode_len <= EXACT_DECODE_LIMIT,
        };
        let attention_total = if exact {
            let mut sum = 0.0;
            for k in first..=last {
                sum += shard.attention(b, 1.0, k as f64, gpu);
            }
            sum
        } else {
            let (f1, _) = shard.attention_cost(b, 1.0, 1.0);
            let (_, bytes0) = shard.attention_cost(b, 1.0, 0.0);
            let (_, bytes1) = shard.attention_cost(b, 1.0, 1.0);
            let a0 = bytes0 / gpu.hbm_bandwidth;
            let a1 = (bytes1 - bytes0) / gpu.hbm_bandwidth;
            let b1 = f1 / gpu.peak_fp16_flops;
            sum_max_linear(a0, a1, b1, first, last)
        };
        out.decode_compute = decode_len as f64 * per_step_fixed + shard.layers * attention_total;
        out.decode_allreduce = decode_len as f64 * per_step_allreduce;
    }
    Ok(out)
}

/// End-to-end serve latency Λ for one replica.
pub fn serve_latency(
    model: &ModelSpec,
    gpu: &GpuType,
    tp: u32,
    batch: u64,
    prefill_len: u64,
    decode_len: u64,
) -> Result<f64, SimError> {
    serve_latency_breakdown(model, gpu, tp, batch, prefill_len, decode_len, DecodeSum::Auto)
        .map(|b| b.total())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct LatencyKey {
    model: [u64; 8],
    gpu: [u64; 6],
    tp: u32,
    batch: u64,
    prefill: u64,
    decode: u64,
    mode: DecodeSum,
}

fn latency_cache() -> &'static Mutex<HashMap<LatencyKey, Result<f64, SimError>>> {
    static CACHE: OnceLock<Mutex<HashMap<LatencyKey, Result<f64, SimError>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const CACHE_LIMIT: usize = 1 << 20;

/// Memoized serve latency keyed by every numeric input, shared across threads.
pub fn serve_latency_cached(
    model: &ModelSpec,
    gpu: &GpuType,
    tp: u32,
    batch: u64,
    prefill_len: u64,
    decode_len: u64,
    mode: DecodeSum,
) -> Result<f64, SimError> {
    let key = LatencyKey {
        model: [
            model.layers,
            model.hidden_dim,
            model.intermediate_dim,
            model.vocab_size,
            model.attn_heads,
            model.kv_heads,
            model.head_dim,
            model.precision_bits as u64,
        ],
        gpu: [
            gpu.peak_fp16_flops.to_bits(),
            gpu.hbm_bandwidth.to_bits(),
            gpu.intra_node_bandwidth.to_bits(),
            gpu.inter_node_bandwidth.to_bits(),
            gpu.gpus_per_node as u64,
            0,
        ],
        tp,
        batch,
        prefill: prefill_len,
        decode: decode_len,
        mode,
    };
    if let Some(hit) = latency_cache().lock().expect("cache lock").get(&key) {
        return hit.clone();
    }
    let value = serve_latency_breakdown(model, gpu, tp, batch, prefill_len, decode_len, mode)
        .map(|b| b.total());
    let mut cache = latency_cache().lock().expect("cache lock");
    if cache.len() >= CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(key, value.clone());
    value
}

/// Whether the per-shard weights fit under `θ·m_g` (inclusive).
pub fn memory_feasible(model: &ModelSpec, gpu: &GpuType, tp: u32, cfg: &SimConfig) -> bool {
    if tp == 0 {
        return false;
    }
    weight_size(model) as f64 / tp as f64 <= cfg.mem_utilization_threshold * gpu.mem_capacity_bytes
}

/// Weight transfer time `τ = W/P·c`.
pub fn transfer_time(model: &ModelSpec, gpu: &GpuType) -> f64 {
    weight_size(model) as f64 / gpu.pcie_bandwidth * model.pcie_coeff
}

/// Termination and load components of a plan transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReconfigBreakdown {
    pub terminate: f64,
    pub load: f64,
}

impl ReconfigBreakdown {
    pub fn total(&self) -> f64 {
        self.terminate + self.load
    }
}

/// Reconfiguration cost split into termination (previous placement) and load (next placement).
///
/// Only models whose weight footprint per (gpu, tp) changed move weights, so a batch-only
/// change costs nothing.
pub fn reconfig_breakdown(
    prev: &ServingPlan,
    next: &ServingPlan,
    catalog: &Catalog,
) -> ReconfigBreakdown {
    let before = footprint(prev);
    let after = footprint(next);
    let models: BTreeSet<&String> = before.keys().chain(after.keys()).collect();
    let mut out = ReconfigBreakdown::default();
    for name in models {
        let old = before.get(name);
        let new = after.get(name);
        if old == new {
            continue;
        }
        let Some(model) = catalog.model(name) else {
            continue;
        };
        let gpus_of = |fp: Option<&std::collections::BTreeMap<(String, u32), u64>>| {
            fp.map(|m| m.keys().map(|(g, _)| g.clone()).collect::<BTreeSet<_>>())
                .unwrap_or_default()
        };
        for g in gpus_of(old) {
            if let Some(gpu) = catalog.gpu(&g) {
                out.terminate = out.terminate.max(transfer_time(model, gpu));
            }
        }
        for g in gpus_of(new) {
            if let Some(gpu) = catalog.gpu(&g) {
                out.load = out.load.max(transfer_time(model, gpu));
            }
        }
    }
    out
}

/// `T_term + T_load` for a plan transition; exactly zero when the plans match.
pub fn reconfig_cost(prev: &ServingPlan, next: &ServingPlan, catalog: &Catalog) -> f64 {
    reconfig_breakdown(prev, next, catalog).total()
}
