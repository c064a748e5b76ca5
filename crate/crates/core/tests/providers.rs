use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ptable_core::embed::{mock_embed, Embedder, EmbeddingCache, EmbeddingProvider, HttpEmbedder};
use ptable_core::http::RetryPolicy;
use ptable_core::querygen::{ChatProvider, HttpChat};

struct Request {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves canned `(status, body)` replies in order, one per connection, and records requests.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Request>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&log);
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(": ").unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.parse().unwrap(),
                    "authorization" => authorization = Some(value.to_string()),
                    _ => {}
                }
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            seen.lock().unwrap().push(Request {
                path,
                authorization,
                body: serde_json::from_slice(&payload).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (addr, log)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        base_delay: Duration::from_millis(1),
    }
}

#[test]
fn mock_embedding_matches_independent_fnv() {
    // Produced by a separate Python FNV-1a 64 implementation at dim 16.
    let a = -0.4082482904638631;
    let b = -0.20412414523193154;
    let cases: [(&str, [f64; 16]); 4] = [
        (
            "Player: Alice | Year: 1990",
            [0.0, 0.0, a, a, a, b, b, a, 0.0, b, 0.0, a, 0.0, 0.0, b, 0.0],
        ),
        ("ab", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        (
            "Straße ÉTÉ",
            [0.0, 0.0, -a, 0.0, 0.0, 0.0, 0.8164965809277261, -a, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ),
    ];
    for (text, expected) in cases {
        let got = mock_embed(text, 16);
        for (g, e) in got.values().iter().zip(expected) {
            assert!((g - e).abs() <= 1e-15, "{text:?}: {:?}", got.values());
        }
    }
}

#[test]
fn http_embeddings_retry_then_succeed() {
    let ok = r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#;
    let (url, log) = serve(vec![
        (503, "busy".into()),
        (429, "slow down".into()),
        (200, ok.into()),
    ]);
    let provider = HttpEmbedder::new(&url, "m", 2, Some("tok".into()), fast_retry());
    let out = provider.embed_batch(&["x".into(), "y".into()]).unwrap();
    assert_eq!(out, vec![vec![3.0, 4.0], vec![0.0, 2.0]]);

    let log = log.lock().unwrap();
    assert_eq!(log.len(), 3);
    assert_eq!(log[2].path, "/v1/embeddings");
    assert_eq!(log[2].authorization.as_deref(), Some("Bearer tok"));
    assert_eq!(log[2].body, serde_json::json!({"model": "m", "input": ["x", "y"]}));
}

#[test]
fn http_client_errors_are_not_retried() {
    let (url, log) = serve(vec![(400, "bad".into()), (200, "{}".into())]);
    let provider = HttpEmbedder::new(&url, "m", 2, None, fast_retry());
    assert!(provider.embed_batch(&["x".into()]).is_err());
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].authorization, None);
}

#[test]
fn retries_are_bounded() {
    let (url, log) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
    let provider = HttpEmbedder::new(&url, "m", 2, None, fast_retry());
    assert!(provider.embed_batch(&["x".into()]).is_err());
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn http_chat_sends_prompt_and_reads_content() {
    let reply = r#"{"choices":[{"message":{"role":"assistant","content":"{\"questions\":[\"q\"]}"}}]}"#;
    let (url, log) = serve(vec![(502, "".into()), (200, reply.into())]);
    let chat = HttpChat::new(&format!("{url}/"), "chat-m".into(), None, fast_retry());
    let out = chat.complete("hello", 0.4, 64).unwrap();
    assert_eq!(out, r#"{"questions":["q"]}"#);
    let log = log.lock().unwrap();
    assert_eq!(log[1].path, "/v1/chat/completions");
    assert_eq!(log[1].body["messages"][0]["content"], "hello");
    assert_eq!(log[1].body["temperature"], 0.4);
    assert_eq!(log[1].body["max_tokens"], 64);
}

#[test]
fn cached_embeddings_skip_the_provider() {
    let ok = r#"{"data":[{"index":0,"embedding":[3.0,4.0]}]}"#;
    let (url, log) = serve(vec![(200, ok.into())]);
    let dir = tempfile::tempdir().unwrap();
    let embedder = |url: &str| {
        let provider = Arc::new(HttpEmbedder::new(url, "m", 2, None, fast_retry()));
        let cache = EmbeddingCache::open(dir.path(), "m").unwrap();
        Embedder::with_provider(provider, Some(cache), 8, 100, 1).unwrap()
    };
    let first = embedder(&url).embed_one("hello").unwrap();
    assert_eq!(first.values(), &[0.6, 0.8]);
    // The server has shut down; only the cache can answer now.
    let second = embedder(&url).embed_one("hello").unwrap();
    assert_eq!(second, first);
    assert_eq!(log.lock().unwrap().len(), 1);
}
