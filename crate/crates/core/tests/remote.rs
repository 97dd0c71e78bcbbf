//! The HTTP completion client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use gpm_core::models::{CompletionModel, CompletionRequest, EndpointConfig, ModelError, ModelSpec, ModelKind, RemoteModel};

struct Seen {
    headers: Vec<String>,
    body: String,
}

/// Answers each connection with the next `(status, body)` and records what
/// the client sent.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                headers.push(line.trim().to_string());
            }
            let len = headers
                .iter()
                .find_map(|h| h.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                .unwrap_or(0);
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { headers, body: String::from_utf8(buf).unwrap() });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, seen)
}

fn endpoint(base: &str) -> EndpointConfig {
    EndpointConfig {
        base_url: base.to_string(),
        model: "test-model".into(),
        backoff_initial_ms: 1,
        requests_per_second: 0.0,
        timeout_secs: 5.0,
        ..Default::default()
    }
}

#[test]
fn retries_transient_failures_and_sends_the_credential() {
    std::env::set_var("GPM_REMOTE_TEST_KEY", "sk-remote-test");
    let (base, seen) = serve(vec![(503, "{}"), (429, "{}"), (200, r#"{"choices":[{"text":" 8 4; 1 2"}]}"#)]);
    let config = EndpointConfig { credential_env: Some("GPM_REMOTE_TEST_KEY".into()), ..endpoint(&base) };
    let model = RemoteModel::new(config).unwrap();
    let text = model.complete(&CompletionRequest::new("4 8 5,", 8).stop([";"])).unwrap();
    assert_eq!(text, " 8 4");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen[0].headers.iter().any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-remote-test")));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["prompt"], "4 8 5,");
    assert_eq!(body["max_tokens"], 8);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen) = serve(vec![(400, "{}"), (200, "{}")]);
    let err = RemoteModel::new(endpoint(&base)).unwrap().complete(&CompletionRequest::new("x", 1)).unwrap_err();
    assert!(matches!(err, ModelError::Transport { attempts: 1, .. }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn exhausted_retries_report_the_attempt_count() {
    let (base, _) = serve(vec![(500, "{}"); 3]);
    let config = EndpointConfig { retries: 2, ..endpoint(&base) };
    let err = RemoteModel::new(config).unwrap().complete(&CompletionRequest::new("x", 1)).unwrap_err();
    assert!(matches!(err, ModelError::Transport { attempts: 3, .. }), "{err}");
}

#[test]
fn missing_credential_is_a_config_error_and_specs_hold_only_the_variable_name() {
    let config = EndpointConfig { credential_env: Some("GPM_REMOTE_TEST_UNSET".into()), ..endpoint("http://127.0.0.1:9") };
    assert!(matches!(RemoteModel::new(config.clone()), Err(ModelError::Config(_))));
    let spec = ModelSpec { kind: ModelKind::Remote, endpoint: Some(config), script: None };
    let text = serde_json::to_string(&spec).unwrap();
    assert!(text.contains("GPM_REMOTE_TEST_UNSET"));
}
