//! Remote embedder and summarizer against a local mock HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use infopattern::claims::{summarize_claim, RemoteSummarizer, SUMMARY_PROMPT};
use infopattern::embedding::{embed_corpus, EmbeddingError, RemoteEmbedder};
use infopattern::pipeline::{ClaimsArtifact, EmbedderKind, Pipeline, PipelineConfig, SummarizerKind, CLAIMS_FILE};
use infopattern::remote::{HttpTransport, RetryPolicy, TransportError};
use infopattern::synthetic::themed_corpus;

type Handler = dyn Fn(&str, &Value, usize) -> (u16, Value) + Send + Sync;

struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
}

fn spawn(handler: impl Fn(&str, &Value, usize) -> (u16, Value) + Send + Sync + 'static) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::new(handler);
    let (h, b) = (hits.clone(), bodies.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut length = 0usize;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim();
                if header.is_empty() {
                    break;
                }
                if let Some((k, v)) = header.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let hit = h.fetch_add(1, Ordering::SeqCst);
            b.lock().unwrap().push(body.clone());
            let (status, reply) = handler(&path, &body, hit);
            let reply = reply.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    Mock { url, hits, bodies }
}

/// Deterministic fake embedding: character count and word count.
fn fake_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = text.len() as f64;
    v[1] = text.split_whitespace().count() as f64;
    v
}

fn embed_reply(body: &Value, dim: usize) -> Value {
    let vectors: Vec<Vec<f64>> = body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| fake_vector(t.as_str().unwrap(), dim))
        .collect();
    json!({ "vectors": vectors })
}

fn embedder(url: &str, dim: usize) -> RemoteEmbedder {
    let mut e = RemoteEmbedder::new(url, dim, Arc::new(HttpTransport));
    e.retry = RetryPolicy::no_delay(3);
    e
}

#[test]
fn batches_and_normalizes_in_order() {
    let mock = spawn(|path, body, _| {
        assert_eq!(path, "/embed");
        (200, embed_reply(body, 4))
    });
    let corpus = themed_corpus(130, 2, 3, 1);
    let out = embed_corpus(&corpus, &embedder(&mock.url, 4)).unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
    let mut sizes: Vec<usize> = mock
        .bodies
        .lock()
        .unwrap()
        .iter()
        .map(|b| b["texts"].as_array().unwrap().len())
        .collect();
    sizes.sort();
    assert_eq!(sizes, [2, 64, 64]);
    for m in corpus.messages() {
        let raw = fake_vector(&m.text, 4);
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let got = out[&m.id].as_slice();
        for (g, r) in got.iter().zip(&raw) {
            assert!((g - r / norm).abs() < 1e-12, "{}", m.id);
        }
    }
}

#[test]
fn transient_failures_are_retried() {
    let mock = spawn(|_, body, hit| if hit < 2 { (503, json!({})) } else { (200, embed_reply(body, 4)) });
    let corpus = themed_corpus(10, 1, 2, 1);
    let out = embed_corpus(&corpus, &embedder(&mock.url, 4)).unwrap();
    assert_eq!(out.len(), 10);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_failure_gives_up_after_three_retries() {
    let mock = spawn(|_, _, _| (500, json!({"error": "down"})));
    let corpus = themed_corpus(5, 1, 2, 1);
    let err = embed_corpus(&corpus, &embedder(&mock.url, 4)).unwrap_err();
    assert!(matches!(
        err,
        EmbeddingError::Transport(TransportError::Status { status: 500, .. })
    ));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn wrong_dimension_names_a_message() {
    let mock = spawn(|_, body, _| (200, embed_reply(body, 3)));
    let corpus = themed_corpus(5, 1, 2, 1);
    match embed_corpus(&corpus, &embedder(&mock.url, 4)) {
        Err(EmbeddingError::DimensionMismatch { id, expected: 4, actual: 3 }) => assert_eq!(id, "m0000"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn summarizer_uses_the_service_and_falls_back_on_failure() {
    let mock = spawn(|path, body, _| {
        assert_eq!(path, "/summarize");
        let prompt = body["prompt"].as_str().unwrap();
        assert!(prompt.starts_with(SUMMARY_PROMPT));
        (200, json!({ "text": format!("{} lines", prompt.lines().count() - 1) }))
    });
    let corpus = themed_corpus(3, 1, 1, 1);
    let reps: Vec<_> = corpus.messages().iter().collect();
    let s = summarize_claim(&reps, &RemoteSummarizer::new(&mock.url, Arc::new(HttpTransport))).unwrap();
    assert_eq!((s.text.as_str(), s.fallback), ("3 lines", false));
    assert_eq!(mock.bodies.lock().unwrap()[0]["max_tokens"], 120);

    let down = spawn(|_, _, _| (500, json!({})));
    let mut summarizer = RemoteSummarizer::new(&down.url, Arc::new(HttpTransport));
    summarizer.retry = RetryPolicy::no_delay(1);
    let s = summarize_claim(&reps, &summarizer).unwrap();
    assert!(s.fallback);
    assert_eq!(s.text, format!("[rep] {}", reps[0].text));
}

#[test]
fn pipeline_with_remote_providers() {
    let mock = spawn(|path, body, _| match path {
        "/embed" => (200, embed_reply(body, 8)),
        _ => (200, json!({ "text": "remote summary" })),
    });
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("m.jsonl");
    themed_corpus(30, 2, 3, 2)
        .write_jsonl(std::fs::File::create(&input).unwrap())
        .unwrap();
    let cfg = PipelineConfig {
        input,
        out_dir: dir.path().join("out"),
        embedder: EmbedderKind::Remote,
        embed_url: Some(mock.url.clone()),
        dim: 8,
        summarizer: SummarizerKind::Remote,
        summarize_url: Some(mock.url.clone()),
        k_max: Some(4),
        ..Default::default()
    };
    Pipeline::new(cfg.clone()).run().unwrap();
    let claims: ClaimsArtifact =
        serde_json::from_slice(&std::fs::read(cfg.out_dir.join(CLAIMS_FILE)).unwrap()).unwrap();
    assert!(claims.claims.iter().all(|c| c.summary == "remote summary" && !c.fallback));
    let before = mock.hits.load(Ordering::SeqCst);
    assert!(Pipeline::new(cfg).run().unwrap().all_skipped());
    assert_eq!(mock.hits.load(Ordering::SeqCst), before);
}
