use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use pke_core::gateway::{Backend, ChatRequest, GatewayError, HttpBackend, HttpConfig, RetryPolicy};

struct Captured {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves the scripted `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Captured {
                auth,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = stream;
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
        .to_string()
}

fn backend(url: &str, retries: u32) -> HttpBackend {
    let mut config = HttpConfig::new(url);
    config.timeout = Duration::from_secs(5);
    config.api_key = Some("secret".into());
    config.retry = RetryPolicy {
        max_retries: retries,
        base_delay: Duration::from_millis(1),
        factor: 2.0,
    };
    HttpBackend::new(config).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest::new("m-1", "write code", 0.4, 32).with_system("be terse")
}

#[test]
fn success_returns_first_choice_and_sends_wire_format() {
    let (url, seen) = serve(vec![(200, ok_body("NOP"))]);
    let response = backend(&url, 3).complete(&request()).unwrap();
    assert_eq!(response.text, "NOP");
    assert_eq!(response.backend, "http");
    assert!(!response.cached);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "m-1");
    assert_eq!(body["temperature"], 0.4);
    assert_eq!(body["max_tokens"], 32);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "write code");
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![(401, "{}".into()), (200, ok_body("late"))]);
    let err = backend(&url, 3).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)), "{err:?}");
    thread::sleep(Duration::from_millis(20));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn server_error_then_success_retries() {
    let (url, seen) = serve(vec![(500, "oops".into()), (200, ok_body("RET"))]);
    let response = backend(&url, 3).complete(&request()).unwrap();
    assert_eq!(response.text, "RET");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn malformed_reply_is_reported() {
    let (url, _) = serve(vec![(200, r#"{"choices": []}"#.into())]);
    let err = backend(&url, 0).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Malformed(_)), "{err:?}");
}

#[test]
fn unreachable_endpoint_exhausts_retries() {
    let err = backend("http://127.0.0.1:1/v1/chat/completions", 2)
        .complete(&request())
        .unwrap_err();
    match err {
        GatewayError::RetriesExhausted { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(matches!(*last, GatewayError::Transport(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_request_never_reaches_the_wire() {
    let mut bad = request();
    bad.temperature = 3.0;
    let err = backend("http://127.0.0.1:1/", 0)
        .complete(&bad)
        .unwrap_err();
    assert!(matches!(err, GatewayError::InvalidRequest(_)));
}
