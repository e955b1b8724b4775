mod support;

use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use cometh::embed::{embed, EmbeddingConfig};
use cometh::gateway::{BackendKind, Gateway, GatewayConfig, GatewayError, TemplateId};
use cometh::Error;
use support::{chat_reply, prompt_of, FakeServer};

fn remote(url: &str) -> GatewayConfig {
    GatewayConfig {
        backend: BackendKind::Remote,
        endpoint_url: Some(url.to_string()),
        model_name: "test-model".into(),
        max_retries: 2,
        timeout_secs: 5,
        backoff_ms: 10,
        ..GatewayConfig::default()
    }
}

#[test]
fn extraction_round_trip() {
    let server = FakeServer::start(|_, _| (200, chat_reply("  Shoots a stranger.\n")));
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    let action = gateway.extract_action("A farmer shoots a stranger.", TemplateId::AMinimalist).unwrap();
    assert_eq!(action, "Shoots a stranger");

    let requests = server.requests.lock().unwrap();
    assert_eq!(requests.len(), 1);
    assert_eq!(requests[0].body["model"], "test-model");
    assert_eq!(requests[0].body["temperature"], 0.0);
    assert!(prompt_of(&requests[0]).ends_with("Scenario: A farmer shoots a stranger."));
}

#[test]
fn cached_completions_skip_the_network() {
    let server = FakeServer::start(|_, _| (200, chat_reply("Yes")));
    let cache = tempfile::tempdir().unwrap();
    let config = GatewayConfig { cache_dir: Some(cache.path().to_path_buf()), ..remote(&server.url) };

    let first = Gateway::new(config.clone()).unwrap();
    assert_eq!(first.evaluate_feature("A nurse stays late.", "works overtime").unwrap(), 1);
    assert_eq!(server.count(), 1);

    let second = Gateway::new(config).unwrap();
    assert_eq!(second.evaluate_feature("A nurse stays late.", "works overtime").unwrap(), 1);
    assert_eq!(second.backend_calls(), 0);
    assert_eq!(server.count(), 1);
}

#[test]
fn rate_limits_are_retried() {
    let server = FakeServer::start(|i, _| if i < 2 { (429, "{}".into()) } else { (200, chat_reply("No")) });
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    assert_eq!(gateway.evaluate_feature("A man waits.", "is in a hurry").unwrap(), 0);
    assert_eq!(server.count(), 3);
}

#[test]
fn exhausted_rate_limit_is_reported() {
    let server = FakeServer::start(|_, _| (429, "{}".into()));
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    let err = gateway.evaluate_feature("A man waits.", "is in a hurry").unwrap_err();
    assert!(matches!(err, GatewayError::RateLimited { attempts: 3 }), "{err:?}");
    assert_eq!(server.count(), 3);
    assert_eq!(Error::from(err).exit_code(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(|_, _| (400, r#"{"error":"bad model"}"#.into()));
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    let err = gateway.evaluate_feature("A man waits.", "is in a hurry").unwrap_err();
    assert!(matches!(err, GatewayError::Http { status: 400, .. }), "{err:?}");
    assert_eq!(server.count(), 1);
}

#[test]
fn server_errors_are_retried() {
    let server = FakeServer::start(|i, _| if i == 0 { (503, "{}".into()) } else { (200, chat_reply("Yes")) });
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    assert_eq!(gateway.evaluate_feature("A man waits.", "is in a hurry").unwrap(), 1);
    assert_eq!(server.count(), 2);
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    thread::spawn(move || {
        let held: Vec<_> = listener.incoming().take(1).collect();
        thread::sleep(Duration::from_secs(10));
        drop(held);
    });
    let config = GatewayConfig { timeout_secs: 1, max_retries: 0, ..remote(&url) };
    let gateway = Gateway::new(config).unwrap();
    let start = Instant::now();
    let err = gateway.evaluate_feature("A man waits.", "is in a hurry").unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn empty_completion_is_an_error() {
    let server = FakeServer::start(|_, _| (200, chat_reply("   ")));
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    let err = gateway.extract_action("A farmer shoots a stranger.", TemplateId::AMinimalist).unwrap_err();
    assert!(matches!(err, GatewayError::EmptyCompletion { template: TemplateId::AMinimalist }), "{err:?}");
}

#[test]
fn api_key_is_sent_as_bearer_token() {
    std::env::set_var("COMETH_TEST_KEY", "sk-test-123");
    let server = FakeServer::start(|_, _| (200, chat_reply("Morally Acceptable")));
    let config = GatewayConfig { api_key_env: Some("COMETH_TEST_KEY".into()), ..remote(&server.url) };
    let gateway = Gateway::new(config).unwrap();
    gateway.judge_scenario("A nurse stays late.", TemplateId::Judge1).unwrap();
    let requests = server.requests.lock().unwrap();
    assert_eq!(requests[0].header("authorization"), Some("Bearer sk-test-123"));
}

#[test]
fn feature_extraction_reasks_once() {
    let bad = "Cluster 1:\n- good intentions\n- b\n- c\n- d\n- e";
    let good = "Cluster 1:\n- acts alone\n- at night\n- armed\n- in a rural area\n- stranger involved";
    let server = FakeServer::start(move |i, _| (200, chat_reply(if i == 0 { bad } else { good })));
    let gateway = Gateway::new(remote(&server.url)).unwrap();
    let clusters = vec![vec!["A farmer shoots a stranger.".to_string()]];
    let features = gateway.extract_features(&clusters, TemplateId::FeatExtract1).unwrap();
    assert_eq!(features[0].len(), 5);
    assert_eq!(features[0][0], "acts alone");

    let requests = server.requests.lock().unwrap();
    assert_eq!(requests.len(), 2);
    assert!(prompt_of(&requests[1]).contains("could not be used"));
}

#[test]
fn remote_embeddings_keep_input_order() {
    let server = FakeServer::start(|_, r| {
        let vectors: Vec<Vec<f64>> = r.body["input"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| {
                let n: f64 = t.as_str().unwrap().trim_start_matches("text ").parse().unwrap();
                vec![n + 1.0, 0.0, 1.0]
            })
            .collect();
        (200, serde_json::json!({ "vectors": vectors }).to_string())
    });
    let texts: Vec<String> = (0..10).map(|i| format!("text {i}")).collect();
    let config = EmbeddingConfig::Remote {
        endpoint_url: server.url.clone(),
        dimension: 3,
        batch_size: 3,
        timeout_secs: 5,
        max_retries: 0,
        backoff_ms: 10,
    };
    let rows = embed(&texts, &config).unwrap();
    assert_eq!(server.count(), 4);
    for (i, row) in rows.iter().enumerate() {
        let a = i as f64 + 1.0;
        let norm = (a * a + 1.0).sqrt();
        assert!((row[0] - a / norm).abs() < 1e-12);
        assert!((row[2] - 1.0 / norm).abs() < 1e-12);
    }
}

#[test]
fn wrong_embedding_dimension_is_rejected() {
    let server = FakeServer::start(|_, _| (200, r#"{"vectors": [[1.0, 2.0]]}"#.into()));
    let config = EmbeddingConfig::Remote {
        endpoint_url: server.url.clone(),
        dimension: 3,
        batch_size: 8,
        timeout_secs: 5,
        max_retries: 0,
        backoff_ms: 10,
    };
    let err = embed(&["one".to_string()], &config).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}
