//! Remote backends against a local HTTP server.

mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{chat_reply, sample_dictionary, TestServer};
use style_retrieval::gateway::{Dispatcher, GatewayError, Journal, SynthesisBackend, SynthesisRequest};
use style_retrieval::selector::{
    embed_text, BackendKind, RawOutput, RetrievalResult, Selector, SelectorConfig, SelectorError,
    StylePrompt,
};
use style_retrieval::transport::{HttpTransport, TransportError};

fn llm_config(endpoint: &str, max_retries: u32) -> SelectorConfig {
    SelectorConfig {
        backend_kind: BackendKind::LlmChat,
        model_name: "gpt-3.5-turbo-16k".into(),
        endpoint: format!("{endpoint}/v1"),
        max_retries,
        timeout_secs: 5.0,
        retry_backoff_ms: 0,
        ..Default::default()
    }
}

#[test]
fn llm_round_trip_over_http() {
    let server = TestServer::start(|req| {
        assert_eq!(req.path, "/v1/chat/completions");
        (200, chat_reply("INDEX: 4"))
    });
    let selector = Selector::llm(
        llm_config(&server.base, 0),
        Arc::new(HttpTransport::new(Some("sk-test".into()))),
    )
    .unwrap();
    let result = selector
        .select(&StylePrompt::selection("Bragging proudly about himself.").unwrap(), &sample_dictionary())
        .unwrap();
    assert_eq!(result.description, "In a triumphant, proud tone");

    let captured = server.captured();
    assert_eq!(captured.len(), 1);
    assert_eq!(captured[0].authorization.as_deref(), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&captured[0].body).unwrap();
    assert_eq!(body["model"], "gpt-3.5-turbo-16k");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn llm_retries_server_errors_then_succeeds() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    let server = TestServer::start(move |_| {
        match h.fetch_add(1, Ordering::SeqCst) {
            0 => (500, "{}".into()),
            1 => (200, chat_reply("I really cannot tell.")),
            _ => (200, chat_reply("Label 3 fits.")),
        }
    });
    let selector = Selector::llm(llm_config(&server.base, 3), Arc::new(HttpTransport::new(None))).unwrap();
    let result = selector
        .select(&StylePrompt::inference("Too late, my days are numbered.").unwrap(), &sample_dictionary())
        .unwrap();
    assert_eq!(result.index, 3);
    assert!(matches!(result.raw_output, RawOutput::LlmResponse { attempts: 3, .. }));
    assert_eq!(server.captured().len(), 3);
    assert!(server.captured()[0].authorization.is_none());
}

#[test]
fn llm_gives_up_after_max_retries() {
    let server = TestServer::start(|_| (503, "{}".into()));
    let selector = Selector::llm(llm_config(&server.base, 2), Arc::new(HttpTransport::new(None))).unwrap();
    let err = selector
        .select(&StylePrompt::selection("calm").unwrap(), &sample_dictionary())
        .unwrap_err();
    assert!(matches!(err, SelectorError::RetriesExhausted { attempts: 3, .. }), "{err}");
    assert!(err.is_operational());
    assert_eq!(server.captured().len(), 3);
}

#[test]
fn remote_embeddings() {
    let server = TestServer::start(|req| {
        assert_eq!(req.path, "/embeddings");
        let body: serde_json::Value = serde_json::from_str(&req.body).unwrap();
        let n = body["input"].as_array().unwrap().len();
        let data: Vec<_> = (0..n)
            .map(|i| serde_json::json!({"index": i, "embedding": [1.0, i as f64]}))
            .collect();
        (200, serde_json::json!({"data": data}).to_string())
    });
    let config = SelectorConfig {
        backend_kind: BackendKind::EmbeddingCosine,
        model_name: "m".into(),
        endpoint: server.base.clone(),
        ..Default::default()
    };
    assert_eq!(embed_text("calm tone", &config).unwrap(), vec![1.0, 0.0]);
    assert!(matches!(embed_text("", &config), Err(SelectorError::EmptyPrompt)));
}

#[test]
fn offline_embed_text() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.json");
    std::fs::write(&path, r#"{"calm tone": [0.1, 0.2]}"#).unwrap();
    let config = SelectorConfig {
        backend_kind: BackendKind::EmbeddingCosine,
        embeddings_file: Some(path),
        ..Default::default()
    };
    assert_eq!(embed_text("calm tone", &config).unwrap(), vec![0.1, 0.2]);
    assert!(matches!(embed_text("loud", &config), Err(SelectorError::UnknownText(_))));
}

fn request() -> SynthesisRequest {
    SynthesisRequest {
        text: "Hurry up! Somebody call an ambulance!".into(),
        reference_id: "ref001".into(),
        latent: vec![0.5; 8],
        duration_scale: 0.75,
        retrieval: RetrievalResult {
            index: 1,
            description: "The tone of a shrill voice and an urgent cry for help".into(),
            backend: "mock".into(),
            raw_output: RawOutput::Scores { scores: vec![] },
        },
    }
}

#[test]
fn http_dispatch_returns_job_id() {
    let server = TestServer::start(|req| {
        assert_eq!(req.path, "/synthesize");
        (200, r#"{"job_id":"j1"}"#.into())
    });
    let dir = tempfile::tempdir().unwrap();
    let dispatcher = Dispatcher::new(
        SynthesisBackend::Http {
            url: server.base.clone(),
            timeout: Duration::from_secs(5),
            transport: Arc::new(HttpTransport::new(None)),
        },
        Journal::open(dir.path().join("j.jsonl")).unwrap(),
    );
    let receipt = dispatcher.dispatch(&request()).unwrap();
    assert_eq!(receipt.job_id, "j1");
    let body: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&server.captured()[0].body).unwrap();
    assert_eq!(
        body.keys().collect::<Vec<_>>(),
        ["duration_scale", "latent", "reference_id", "text"]
    );
}

#[test]
fn unreachable_backend_still_journals() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.jsonl");
    let dispatcher = Dispatcher::new(
        SynthesisBackend::Http {
            url: "http://127.0.0.1:9".into(),
            timeout: Duration::from_secs(2),
            transport: Arc::new(HttpTransport::new(None)),
        },
        Journal::open(&path).unwrap(),
    );
    let err = dispatcher.dispatch(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Transport(TransportError::Request { .. })), "{err}");
    let records = Journal::replay(&path).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].request, request().payload());
}
