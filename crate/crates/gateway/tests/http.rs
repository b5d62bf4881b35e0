use std::sync::Arc;

use biasscreen_core::corpus::{Label, Vocabulary};
use biasscreen_core::net::{attach_classifier_head, LmNetwork, ModelConfig};
use biasscreen_core::numkit::Dense2D;
use biasscreen_core::screener::{ScreenResult, ScreenerEngine};
use biasscreen_gateway::*;
use reqwest::StatusCode;

const TEXTS: [&str; 4] = [
    "We are a young organisation looking for young and talented marketers. The office is in Leeds.",
    "Salesmen wanted! He must be a strong leader. Mr. Jones will interview.",
    "",
    "The team meets on Mondays. Applicants should be recent graduates? Native speakers preferred.",
];

fn engine() -> ScreenerEngine {
    let vocab = Vocabulary::build_from_sentences(&TEXTS, 1, 1000).unwrap();
    let config = ModelConfig { embed_dim: 8, hidden_dim: 12, ..ModelConfig::new(vocab.len()) };
    let mut net = attach_classifier_head(LmNetwork::new(config, 5).unwrap(), Label::COUNT).unwrap();
    let w = &net.class_linear.value;
    net.class_linear.value = Dense2D::from_fn(w.rows(), w.cols(), |r, c| 40.0 * ((r * 7 + c * 3) as f32).sin());
    ScreenerEngine::new(net, vocab, "test-model").unwrap()
}

struct Harness {
    state: Arc<AppState>,
    base: String,
    client: reqwest::Client,
    _dir: tempfile::TempDir,
}

async fn harness(ready: bool, tweak: impl FnOnce(&mut GatewayConfig)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut config = GatewayConfig { log_path: dir.path().join("requests.jsonl"), ..GatewayConfig::default() };
    tweak(&mut config);
    let state = AppState::new(config).unwrap();
    if ready {
        state.install(engine()).unwrap();
    }
    let server = start(Arc::clone(&state), ([127, 0, 0, 1], 0).into()).await.unwrap();
    Harness { state, base: format!("http://{}", server.addr), client: reqwest::Client::new(), _dir: dir }
}

impl Harness {
    async fn post(&self, body: impl Into<reqwest::Body>) -> reqwest::Response {
        self.client
            .post(format!("{}/v1/screen", self.base))
            .header("content-type", "application/json")
            .body(body)
            .send()
            .await
            .unwrap()
    }

    async fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> T {
        self.client.get(format!("{}{path}", self.base)).send().await.unwrap().json().await.unwrap()
    }
}

#[tokio::test]
async fn screen_matches_direct_engine_call() {
    let h = harness(true, |_| {}).await;
    let direct = engine();
    for text in TEXTS {
        for threshold in [None, Some(0.0), Some(0.9)] {
            let req = ScreenRequest { text: text.into(), threshold, client: Some("t".into()) };
            let resp = h.post(serde_json::to_vec(&req).unwrap()).await;
            assert_eq!(resp.status(), StatusCode::OK);
            assert!(resp.headers().contains_key(TIMING_HEADER));
            let body = resp.bytes().await.unwrap();
            let expected = direct.screen_text_with(text, threshold.unwrap_or(0.5)).unwrap();
            assert_eq!(body, serde_json::to_vec(&expected).unwrap());
            let parsed: ScreenResult = serde_json::from_slice(&body).unwrap();
            assert!(parsed.findings.windows(2).all(|p| p[0].confidence >= p[1].confidence));
        }
    }
    let stats: Stats = h.get("/v1/stats").await;
    assert_eq!((stats.total, stats.ok), (12, 12));
}

#[tokio::test]
async fn error_statuses() {
    let h = harness(true, |c| c.max_body_bytes = 100).await;
    assert_eq!(h.post("{not json").await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(h.post(r#"{"txt": "x"}"#).await.status(), StatusCode::BAD_REQUEST);
    assert_eq!(h.post(r#"{"text": "x", "threshold": 1.5}"#).await.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(h.post(r#"{"text": "x", "threshold": -0.1}"#).await.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let long = serde_json::to_vec(&ScreenRequest { text: "a".repeat(101), threshold: None, client: None }).unwrap();
    assert_eq!(h.post(long).await.status(), StatusCode::PAYLOAD_TOO_LARGE);
    let huge = vec![b' '; 2 << 20];
    let resp = h.post(huge).await;
    assert_eq!(resp.status(), StatusCode::PAYLOAD_TOO_LARGE);
    let body: ErrorBody = resp.json().await.unwrap();
    assert_eq!(body.status, 413);

    let stats: Stats = h.get("/v1/stats").await;
    assert_eq!((stats.total, stats.ok, stats.client_errors, stats.server_errors), (6, 0, 6, 0));
}

#[tokio::test]
async fn loading_service_answers_503_then_becomes_ready() {
    let h = harness(false, |c| c.workers = 3).await;
    let health: Health = h.get("/v1/health").await;
    assert_eq!(health.status, ServiceStatus::Loading);
    assert_eq!(health.parallelism, 3);
    assert_eq!(health.checkpoint_id, None);
    assert_eq!(h.post(r#"{"text": "hello"}"#).await.status(), StatusCode::SERVICE_UNAVAILABLE);

    h.state.install(engine()).unwrap();
    assert!(h.state.install(engine()).is_err());
    let health: Health = h.get("/v1/health").await;
    assert_eq!(health.status, ServiceStatus::Ready);
    assert_eq!(health.checkpoint_id.as_deref(), Some("test-model"));
    assert_eq!(h.post(r#"{"text": "hello"}"#).await.status(), StatusCode::OK);
}

#[tokio::test]
async fn default_parallelism_and_failed_load() {
    let h = harness(false, |_| {}).await;
    h.state.fail("checkpoint missing");
    let health: Health = h.get("/v1/health").await;
    assert_eq!(health.parallelism, 8);
    assert_eq!(health.status, ServiceStatus::Failed);
    assert_eq!(health.error.as_deref(), Some("checkpoint missing"));
}

#[tokio::test]
async fn eight_simultaneous_requests_get_their_own_answers() {
    let h = Arc::new(harness(true, |_| {}).await);
    let direct = engine();
    let mut tasks = Vec::new();
    for i in 0..8 {
        let h = Arc::clone(&h);
        let text = format!("{} Request number {i}.", TEXTS[i % 4]);
        tasks.push(tokio::spawn(async move {
            let req = ScreenRequest { text: text.clone(), threshold: Some(0.0), client: None };
            let resp = h.post(serde_json::to_vec(&req).unwrap()).await;
            (text, resp.status(), resp.bytes().await.unwrap())
        }));
    }
    for t in tasks {
        let (text, status, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body, serde_json::to_vec(&direct.screen_text_with(&text, 0.0).unwrap()).unwrap());
    }
    assert!(h.state.pool().peak_active() <= 8);
}

#[tokio::test]
async fn stats_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("requests.jsonl");
    let first = harness(true, |c| c.log_path = log_path.clone()).await;
    let fresh: Stats = first.get("/v1/stats").await;
    assert_eq!((fresh.total, fresh.findings), (0, 0));
    for t in TEXTS {
        let req = ScreenRequest { text: t.into(), threshold: Some(0.0), client: None };
        assert_eq!(first.post(serde_json::to_vec(&req).unwrap()).await.status(), StatusCode::OK);
    }
    let before: Stats = first.get("/v1/stats").await;
    assert_eq!(before.total, 4);
    let lines = std::fs::read_to_string(&log_path).unwrap();
    assert_eq!(lines.lines().count(), 4);
    assert!(!lines.contains("young organisation"));

    let second = harness(true, |c| c.log_path = log_path.clone()).await;
    let after: Stats = second.get("/v1/stats").await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn cors_headers_are_toggleable() {
    for on in [true, false] {
        let h = harness(true, |c| c.cors = on).await;
        let resp = h
            .client
            .get(format!("{}/v1/health", h.base))
            .header("origin", "http://localhost:5173")
            .send()
            .await
            .unwrap();
        assert_eq!(resp.headers().contains_key("access-control-allow-origin"), on);
    }
}
