//! LLM mutation firewall and the HTTP chat transport.

use policylab_core::catalog::Catalog;
use policylab_core::evaluator::{EvalReport, ReplayConfig};
use policylab_core::policy::{seed_by_name, PolicyGenome};
use policylab_core::traces::bundled_trace;
use policylab_evolve::engine::{evolve_cycle, EvolveConfig, MutatorKind};
use policylab_evolve::llm::{
    apply_edit, assemble_prompt, parse_edit, recorded_fixture, ChatMessage, ChatRequest, ChatTransport, HttpTransport,
    LlmEndpointConfig, LlmError, LlmMutator, MockReply, MockTransport, PopulationContext, TransportError,
    EDITABLE_PATHS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn fence(body: &str) -> String {
    format!("Proposed change.\n\n```json\n{body}\n```\n")
}

/// Responses that must never yield a genome, each with the parent it targets.
fn malformed_corpus() -> Vec<(String, &'static str)> {
    let periodic = "greedy-periodic-full";
    let delta = "localsearch-delta-minimal";
    let penalized = "exact-costbenefit-penalized";
    let mut out: Vec<(String, &'static str)> = Vec::new();
    for name in ["prose_only", "unknown_path", "out_of_range", "malformed_json", "wrong_variant_parameter"] {
        out.push((recorded_fixture(name).unwrap().to_string(), penalized));
    }
    let structural = [
        String::new(),
        "no fence at all".into(),
        "```json\n{\"migration.mode\": \"full\"}".into(),
        "```yaml\nmigration.mode: full\n```".into(),
        fence("[]"),
        fence("{}"),
        fence("\"migration.mode\""),
        fence("{\"migration.mode\": \"full\",}"),
        fence("{migration.mode: \"full\"}"),
    ];
    out.extend(structural.into_iter().map(|t| (t, periodic)));
    let bad_values: &[(&str, &str, &'static str)] = &[
        ("trigger.variant", "\"sometimes\"", periodic),
        ("trigger.variant", "3", periodic),
        ("trigger.variant.every", "0", periodic),
        ("trigger.variant.every", "-1", periodic),
        ("trigger.variant.every", "1.5", periodic),
        ("trigger.variant.every", "\"often\"", periodic),
        ("trigger.variant.delta", "-0.1", delta),
        ("trigger.variant.delta", "0.2", periodic),
        ("trigger.variant.margin", "-1", penalized),
        ("trigger.variant.margin", "1", periodic),
        ("trigger.mandatory_on_cluster_change", "\"yes\"", periodic),
        ("scheduler.algorithm", "\"simplex\"", periodic),
        ("scheduler.time_budget_seconds", "0", periodic),
        ("scheduler.time_budget_seconds", "-2", periodic),
        ("scheduler.time_budget_seconds", "4000", periodic),
        ("scheduler.batch_candidate_policy", "\"all\"", periodic),
        ("scheduler.curated_set", "[]", periodic),
        ("scheduler.curated_set", "[0, 8]", periodic),
        ("scheduler.curated_set", "[8, 5000]", periodic),
        ("scheduler.curated_set", "8", periodic),
        ("scheduler.tp_floor_rules", "[{\"min_weight_bytes\": 1, \"min_tp\": 0}]", periodic),
        ("scheduler.tp_floor_rules", "[{\"min_tp\": 2}]", periodic),
        ("scheduler.secondary_objective_epsilon", "-0.5", periodic),
        ("scheduler.relative_gap", "1.0", periodic),
        ("scheduler.relative_gap", "-0.01", periodic),
        ("scheduler.node_limit", "0", periodic),
        ("scheduler.seed", "-4", periodic),
        ("migration.mode", "\"teleport\"", periodic),
        ("migration.w", "-2", penalized),
        ("migration.w", "0.5", periodic),
    ];
    for (path, value, parent) in bad_values {
        out.push((fence(&format!("{{\"{path}\": {value}}}")), parent));
        out.push((fence(&format!("{{\"migration.mode\": \"full\", \"{path}\": {value}}}")), parent));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let len = rng.gen_range(1..12);
        let path: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if EDITABLE_PATHS.iter().all(|(p, _)| *p != path) {
            out.push((fence(&format!("{{\"{path}\": 1}}")), periodic));
        }
    }
    for name in ["valid_cost_benefit", "valid_faster_scheduler"] {
        let text = recorded_fixture(name).unwrap();
        let close = text.rfind("```").unwrap();
        for cut in (0..close).step_by(7) {
            out.push((text[..cut].to_string(), penalized));
        }
    }
    out
}

fn prompt_for(g: &PolicyGenome) -> policylab_evolve::llm::MutationPrompt {
    let r = EvalReport::from_intervals(&g.id, "t", Vec::new());
    assemble_prompt(g, &r, &[], &PopulationContext::default(), 16384)
}

fn quiet() -> LlmEndpointConfig {
    LlmEndpointConfig {
        retry_backoff_ms: 0,
        ..LlmEndpointConfig::default()
    }
}

#[test]
fn every_malformed_response_is_rejected() {
    let corpus = malformed_corpus();
    assert!(corpus.len() > 250);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (text, parent) in &corpus {
        let parent = seed_by_name(parent).unwrap();
        let direct = parse_edit(text).and_then(|e| apply_edit(&parent, &e));
        assert!(direct.is_err(), "accepted {text:?}");
        let mock = Arc::new(MockTransport::new(vec![MockReply::Text(text.clone())]));
        let m = LlmMutator::new(quiet(), mock).unwrap();
        let err = m.mutate(&parent, &prompt_for(&parent), &mut rng).unwrap_err();
        assert!(matches!(err, LlmError::Rejected(_)), "{text:?}: {err:?}");
    }
}

#[test]
fn valid_fixtures_yield_valid_children() {
    for (name, parent) in [("valid_cost_benefit", "exact-costbenefit-penalized"), ("valid_faster_scheduler", "exact-never-full")] {
        let parent = seed_by_name(parent).unwrap();
        let edit = parse_edit(recorded_fixture(name).unwrap()).unwrap();
        let child = apply_edit(&parent, &edit).unwrap();
        child.validate().unwrap();
        assert_ne!(child.id, parent.id);
        assert_eq!(child.lineage.parent.as_deref(), Some(parent.id.as_str()));
    }
}

#[test]
fn malformed_replies_never_reach_evaluation() {
    let replies: Vec<MockReply> = malformed_corpus().into_iter().map(|(t, _)| MockReply::Text(t)).take(40).collect();
    let llm = Arc::new(LlmMutator::new(quiet(), Arc::new(MockTransport::new(replies))).unwrap());
    let cfg = EvolveConfig {
        max_iterations: 6,
        population_size: 8,
        mutator: MutatorKind::Llm,
        ..EvolveConfig::default()
    };
    let trace = bundled_trace("motivation-shifting").unwrap();
    let r = evolve_cycle(&trace, &Catalog::bundled(), &ReplayConfig::default(), &cfg, &[], Some(llm.clone())).unwrap();
    let stats = llm.stats();
    assert!(stats.requests > 0);
    assert_eq!(stats.accepted, 0);
    assert_eq!(stats.rejected, stats.requests);
    assert!(r.log.iter().all(|l| !l.mutation.starts_with("llm:")));
}

#[test]
fn cycle_completes_with_the_endpoint_down() {
    let cfg = EvolveConfig {
        max_iterations: 6,
        population_size: 8,
        mutator: MutatorKind::Mixed { p_llm: 1.0 },
        ..EvolveConfig::default()
    };
    let endpoint = LlmEndpointConfig {
        base_url: "http://127.0.0.1:9/v1".into(),
        request_timeout_seconds: 2.0,
        ..quiet()
    };
    let llm = Arc::new(LlmMutator::http(endpoint).unwrap());
    let trace = bundled_trace("motivation-shifting").unwrap();
    let r = evolve_cycle(&trace, &Catalog::bundled(), &ReplayConfig::default(), &cfg, &[], Some(llm)).unwrap();
    assert_eq!(r.notices.len(), 1, "{:?}", r.notices);
    assert!(r.notices[0].contains("falling back"));
    assert_eq!(r.iterations(), 6);
}

mod http {
    use super::*;
    use axum::http::{HeaderMap, StatusCode};
    use axum::routing::post;
    use axum::{Json, Router};
    use serde_json::{json, Value};

    /// Serves a chat endpoint on an ephemeral port; returns its base URL.
    fn serve(router: Router) -> String {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router).await.unwrap();
            });
        });
        format!("http://{}/v1", rx.recv().unwrap())
    }

    fn request() -> ChatRequest {
        ChatRequest {
            model: "primary".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: "hello".into(),
            }],
            temperature: 0.7,
            max_tokens: 64,
        }
    }

    #[test]
    fn round_trip_with_bearer_key() {
        let router = Router::new().route(
            "/v1/chat/completions",
            post(|headers: HeaderMap, Json(body): Json<Value>| async move {
                let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).unwrap_or("").to_string();
                let reply = format!("{} {} {}", body["model"].as_str().unwrap_or(""), body["messages"][0]["content"].as_str().unwrap_or(""), auth);
                Json(json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}))
            }),
        );
        let base = serve(router);
        std::env::set_var("POLICYLAB_TEST_KEY_A", "sk-test");
        let cfg = LlmEndpointConfig {
            base_url: base,
            api_key_env: "POLICYLAB_TEST_KEY_A".into(),
            ..quiet()
        };
        let t = HttpTransport::new(&cfg).unwrap();
        assert_eq!(t.send(&request()).unwrap(), "primary hello Bearer sk-test");
        assert!(!format!("{t:?}").contains("sk-test"));
    }

    #[test]
    fn status_and_decode_failures() {
        let router = Router::new()
            .route("/bad/chat/completions", post(|| async { StatusCode::INTERNAL_SERVER_ERROR }))
            .route("/empty/chat/completions", post(|| async { Json(json!({"choices": []})) }))
            .route("/junk/chat/completions", post(|| async { "not json" }));
        let base = serve(router);
        let root = base.trim_end_matches("/v1").to_string();
        let send = |path: &str| {
            let cfg = LlmEndpointConfig {
                base_url: format!("{root}/{path}"),
                ..quiet()
            };
            HttpTransport::new(&cfg).unwrap().send(&request())
        };
        assert_eq!(send("bad"), Err(TransportError::Status(500)));
        assert!(matches!(send("empty"), Err(TransportError::Decode(_))));
        assert!(matches!(send("junk"), Err(TransportError::Decode(_))));
    }

    #[test]
    fn mutator_applies_an_edit_served_over_http() {
        let body = recorded_fixture("valid_faster_scheduler").unwrap().to_string();
        let router = Router::new().route(
            "/v1/chat/completions",
            post(move || {
                let body = body.clone();
                async move { Json(json!({"choices": [{"message": {"content": body}}]})) }
            }),
        );
        let cfg = LlmEndpointConfig {
            base_url: serve(router),
            ..quiet()
        };
        let m = LlmMutator::http(cfg).unwrap();
        let parent = seed_by_name("exact-never-full").unwrap();
        let child = m.mutate(&parent, &prompt_for(&parent), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(child.summary().starts_with("greedy"));
        assert_eq!(m.stats().accepted, 1);
    }
}
