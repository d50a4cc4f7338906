//! Shared test support: a miniature HTTP/1.1 server speaking the remote
//! backend's wire protocol, plus a handler that answers from a seeded mock
//! model so remote decodes can be compared against local ones.

#![allow(dead_code)] // each test target uses a different subset

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use cgr_core::backend::{
    default_vocab, MockBackend, MockProfile, SpecialTokens, Token, Vocabulary,
};
use cgr_core::TokenBackend;

/// What a route handler tells the server to send back.
pub enum Reply {
    /// 200 with a JSON body.
    Json(String),
    /// Arbitrary status with a plain-text body.
    Status(u16, String),
    /// Sleep, then drop the connection without answering (timeout tests).
    Hang(Duration),
}

/// Route dispatch: (path, request body) → reply.
pub type Handler = Box<dyn Fn(&str, &str) -> Reply + Send + Sync>;

/// A single-threaded HTTP server on an ephemeral localhost port. Requests
/// are served sequentially; concurrent clients queue in the listen backlog.
pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: Handler) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind an ephemeral port");
        let addr = listener.local_addr().expect("listener has an address");
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                serve_one(stream, &handler);
            }
        });
        StubServer { addr, stop, thread: Some(thread) }
    }

    /// Base URL, e.g. `http://127.0.0.1:49152`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop so the thread notices the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

fn serve_one(mut stream: TcpStream, handler: &Handler) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let Some((path, body)) = read_request(&mut stream) else { return };
    match handler(&path, &body) {
        Reply::Json(json) => write_response(&mut stream, 200, "application/json", &json),
        Reply::Status(code, text) => write_response(&mut stream, code, "text/plain", &text),
        Reply::Hang(pause) => std::thread::sleep(pause),
    }
}

/// Read one request; returns (path, body). `None` on anything malformed —
/// the connection is simply dropped, which clients report as a transport
/// error.
fn read_request(stream: &mut TcpStream) -> Option<(String, String)> {
    let mut raw = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        raw.extend_from_slice(&chunk[..n]);
        if let Some(pos) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos;
        }
        if raw.len() > 1 << 20 {
            return None;
        }
    };
    let head = String::from_utf8_lossy(&raw[..header_end]).to_string();
    let mut lines = head.lines();
    let request_line = lines.next()?;
    let path = request_line.split_whitespace().nth(1)?.to_string();
    let content_length: usize = lines
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.trim().parse().ok())
        .unwrap_or(0);
    let mut body = raw[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        body.extend_from_slice(&chunk[..n]);
    }
    body.truncate(content_length);
    Some((path, String::from_utf8_lossy(&body).to_string()))
}

fn write_response(stream: &mut TcpStream, status: u16, content_type: &str, body: &str) {
    let reason = if status == 200 { "OK" } else { "Error" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\n\
         Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len(),
    );
    let _ = stream.write_all(response.as_bytes());
}

/// A handler that serves the wire protocol from a seeded mock model using
/// the default vocabulary. `question_prefix` is the token-id sequence of
/// the question; contexts starting with it are split back into
/// (question, generated) so the served distributions match a local
/// `MockBackend` exactly.
pub fn mock_backed_handler(seed: u64, profile: MockProfile, question_prefix: Vec<u32>) -> Handler {
    let vocab = default_vocab();
    let specials = SpecialTokens::default_for(&vocab).expect("default specials");
    let backend =
        MockBackend::build(seed, profile, vocab.clone(), specials).expect("mock builds");
    Box::new(move |path, body| match path {
        "/v1/tokenize" => serve_tokenize(&vocab, body),
        "/v1/next" => serve_next(&backend, &vocab, &question_prefix, body),
        other => Reply::Status(404, format!("no route {other}")),
    })
}

fn serve_tokenize(vocab: &Vocabulary, body: &str) -> Reply {
    let request: serde_json::Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return Reply::Status(400, format!("bad request: {e}")),
    };
    let Some(text) = request["text"].as_str() else {
        return Reply::Status(400, "tokenize request has no text".into());
    };
    match vocab.tokenize(text) {
        Ok(tokens) => {
            let ids: Vec<u32> = tokens.iter().map(|t| t.id).collect();
            let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
            Reply::Json(serde_json::json!({ "ids": ids, "texts": texts }).to_string())
        }
        Err(e) => Reply::Status(400, format!("untokenizable text: {e}")),
    }
}

fn serve_next(
    backend: &MockBackend,
    vocab: &Vocabulary,
    question_prefix: &[u32],
    body: &str,
) -> Reply {
    let request: serde_json::Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return Reply::Status(400, format!("bad request: {e}")),
    };
    let Some(raw_ids) = request["context_ids"].as_array() else {
        return Reply::Status(400, "next request has no context_ids".into());
    };
    let ids: Vec<u32> = raw_ids.iter().filter_map(|v| v.as_u64()).map(|v| v as u32).collect();
    if ids.len() != raw_ids.len() {
        return Reply::Status(400, "context_ids must be non-negative integers".into());
    }
    let top_k = request["top_k"].as_u64().unwrap_or(1) as usize;
    let split = if ids.starts_with(question_prefix) { question_prefix.len() } else { 0 };
    let to_tokens =
        |slice: &[u32]| -> Option<Vec<Token>> { slice.iter().map(|id| vocab.token(*id)).collect() };
    let (Some(question), Some(generated)) = (to_tokens(&ids[..split]), to_tokens(&ids[split..]))
    else {
        return Reply::Status(400, "context_ids contain unknown token ids".into());
    };
    match backend.next_distribution(&question, &generated, top_k) {
        Ok(dist) => {
            let candidates: Vec<serde_json::Value> = dist
                .candidates
                .iter()
                .map(|(tok, p)| {
                    serde_json::json!({ "id": tok.id, "text": tok.text, "logprob": p.ln() })
                })
                .collect();
            Reply::Json(serde_json::json!({ "candidates": candidates }).to_string())
        }
        Err(e) => Reply::Status(500, format!("model error: {e}")),
    }
}
