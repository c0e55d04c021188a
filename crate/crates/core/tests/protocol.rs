mod common;

use std::sync::Arc;
use std::time::Duration;

use psyprobe::backend::{
    HttpBackend, MockRespondent, RecordReplay, RetryPolicy, ScoreRequest, ServerOptions,
};
use psyprobe::{Backend, BackendError, CanonicalLabel};

use common::ServeMock;

fn request() -> ScoreRequest {
    ScoreRequest::new(
        "Options:\nVery Accurate\nVery Inaccurate\nMy answer: ",
        vec!["Very Accurate".into(), "Very Inaccurate".into()],
    )
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        initial_backoff: Duration::from_millis(5),
        max_backoff: Duration::from_millis(20),
    }
}

/// In-process server around a mock, on a free port.
async fn spawn_server(options: ServerOptions) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let backend: Arc<dyn Backend> = Arc::new(MockRespondent::constant(CanonicalLabel::VA));
    tokio::spawn(psyprobe::backend::serve(listener, backend, options));
    url
}

#[tokio::test]
async fn retries_through_loading_503s() {
    let server = ServeMock::spawn(&["--loading-requests", "2", "--model-name", "tiny"]);
    let client = HttpBackend::new(server.url.clone()).with_retry(fast_retry(4));
    let resp = client.score_raw(&request()).await.unwrap();
    assert_eq!(resp.model, "tiny");
    assert_eq!(resp.results.len(), 2);
    assert!(resp.results[0].total_logprob() > resp.results[1].total_logprob());
    assert_eq!(client.descriptor().name, "tiny");
}

#[tokio::test]
async fn gives_up_after_retry_budget() {
    let url = spawn_server(ServerOptions {
        loading_requests: 10,
        ..Default::default()
    })
    .await;
    let client = HttpBackend::new(url).with_retry(fast_retry(2));
    match client.score_raw(&request()).await {
        Err(BackendError::Unavailable { status: 503, .. }) => {}
        other => panic!("expected 503, got {other:?}"),
    }
}

#[tokio::test]
async fn health_reports_loading_then_ok() {
    let url = spawn_server(ServerOptions {
        loading_requests: 1,
        ..Default::default()
    })
    .await;
    let health = |url: String| async move {
        reqwest::get(format!("{url}/healthz")).await.unwrap().status().as_u16()
    };
    assert_eq!(health(url.clone()).await, 503);
    let _ = HttpBackend::new(url.clone())
        .with_retry(fast_retry(0))
        .score_raw(&request())
        .await;
    assert_eq!(health(url).await, 200);
}

#[tokio::test]
async fn bearer_token_is_enforced() {
    let url = spawn_server(ServerOptions {
        token: Some("s3cret".into()),
        ..Default::default()
    })
    .await;
    let anonymous = HttpBackend::new(url.clone()).with_retry(fast_retry(0));
    assert!(matches!(
        anonymous.score_raw(&request()).await,
        Err(BackendError::Protocol(msg)) if msg.contains("401")
    ));
    let wrong = HttpBackend::new(url.clone()).with_token(Some("nope".into()));
    assert!(wrong.score_raw(&request()).await.is_err());
    let authed = HttpBackend::new(url).with_token(Some("s3cret".into()));
    assert!(authed.score_raw(&request()).await.is_ok());
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let client = HttpBackend::new(url).with_retry(fast_retry(1));
    assert!(matches!(
        client.score_raw(&request()).await,
        Err(BackendError::Transport(_))
    ));
}

#[tokio::test]
async fn records_over_http_and_replays_offline() {
    let url = spawn_server(ServerOptions {
        model_name: Some("served".into()),
        ..Default::default()
    })
    .await;
    let dir = tempfile::tempdir().unwrap();
    let cassette = dir.path().join("nested/run.jsonl");
    let inner: Arc<dyn Backend> = Arc::new(HttpBackend::new(url));
    let recorder = RecordReplay::record(inner, &cassette).unwrap();
    let live = recorder.score(&request()).await.unwrap();

    let text = std::fs::read_to_string(&cassette).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains(r#""model":"served""#));

    let replay = RecordReplay::replay(&cassette).unwrap();
    assert_eq!(replay.score(&request()).await.unwrap(), live);
    let other = ScoreRequest::new("unseen", vec!["A".into()]);
    assert!(matches!(
        replay.score(&other).await,
        Err(BackendError::CassetteMiss { .. })
    ));
}

#[tokio::test]
async fn invalid_requests_are_rejected_before_sending() {
    let client = HttpBackend::new("http://127.0.0.1:9");
    let empty = ScoreRequest::new("p", vec![]);
    assert!(matches!(
        psyprobe::backend::score(&client, &empty).await,
        Err(BackendError::InvalidRequest(_))
    ));
}
