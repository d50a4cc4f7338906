//! Remote model-server client.
//!
//! Speaks a two-route JSON/HTTP protocol:
//!
//! * `POST /v1/next` with `{"context_ids": [...], "top_k": n}` →
//!   `{"candidates": [{"id": int, "text": str, "logprob": float}, ...]}`
//! * `POST /v1/tokenize` with `{"text": str}` →
//!   `{"ids": [...], "texts": [...]}`
//!
//! Log-probabilities travel on the wire (probabilities underflow for rare
//! tokens) and are exponentiated at this boundary. Requests are pure reads,
//! so a failed call is always safe to retry.
//!
//! The transport is a deliberately small HTTP/1.1 client over
//! `std::net::TcpStream`: plain `http://` only, one connection per request,
//! `Content-Length` or close-delimited responses. Construction resolves the
//! end-of-thinking token over the wire, which doubles as the fail-fast
//! reachability ping.

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{
    SpecialTokens, Token, TokenBackend, TokenDistribution, DEFAULT_ANSWER_CLOSE,
    DEFAULT_ANSWER_PREFIX, DEFAULT_WAIT_TEXT,
};
use crate::error::Error;

/// Wire conventions the protocol itself cannot express: by default token id
/// 0 is end-of-sequence (the bundled stub server honors this), and the
/// end-of-thinking token is whatever "</think>" tokenizes to. Both are
/// overridable in the backend spec (`eos_id=N`, `end_think_id=N`).
pub const DEFAULT_EOS_ID: u32 = 0;
const END_THINK_TEXT: &str = "</think>";
const EOS_PLACEHOLDER_TEXT: &str = "<eos>";

#[derive(Serialize)]
struct NextRequest<'a> {
    context_ids: &'a [u32],
    top_k: usize,
}

#[derive(Deserialize)]
struct NextResponse {
    candidates: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    id: u32,
    text: String,
    logprob: f64,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    ids: Vec<u32>,
    texts: Vec<String>,
}

/// Client for a remote next-token server.
#[derive(Debug)]
pub struct RemoteBackend {
    url: ParsedUrl,
    timeout: Duration,
    specials: SpecialTokens,
}

/// One wire round-trip: the top-k distribution for a context.
/// Standalone form of the trait method, usable against any client.
pub fn remote_next(
    client: &RemoteBackend,
    question: &[Token],
    generated: &[Token],
    top_k: usize,
) -> Result<TokenDistribution, Error> {
    client.next_distribution(question, generated, top_k)
}

impl RemoteBackend {
    /// Connect to `url` (e.g. `http://127.0.0.1:9000`). Fails fast when the
    /// server is unreachable: the constructor performs a tokenize round-trip
    /// to resolve the end-of-thinking token.
    pub fn connect(
        url: &str,
        timeout: Duration,
        eos_id: Option<u32>,
        end_think_id: Option<u32>,
    ) -> Result<Self, Error> {
        let url = parse_http_url(url)?;
        let probe = Self {
            url,
            timeout,
            specials: SpecialTokens {
                end_think: Token::new(u32::MAX, END_THINK_TEXT),
                end_of_sequence: Token::new(u32::MAX - 1, EOS_PLACEHOLDER_TEXT),
                wait_text: DEFAULT_WAIT_TEXT.into(),
                answer_prefix_text: DEFAULT_ANSWER_PREFIX.into(),
                answer_close_text: DEFAULT_ANSWER_CLOSE.into(),
            },
        };
        // Always round-trip, even with explicit ids: this is the
        // reachability check that lets runs fail before any work starts.
        let end_think_tokens = probe.tokenize(END_THINK_TEXT)?;
        let end_think = match end_think_id {
            Some(id) => Token::new(id, END_THINK_TEXT),
            None => {
                if end_think_tokens.len() != 1 {
                    return Err(Error::Protocol(format!(
                        "{END_THINK_TEXT:?} tokenized to {} tokens; pass end_think_id=N \
                         in the backend spec for multi-token vocabularies",
                        end_think_tokens.len()
                    )));
                }
                end_think_tokens.into_iter().next().unwrap()
            }
        };
        let end_of_sequence =
            Token::new(eos_id.unwrap_or(DEFAULT_EOS_ID), EOS_PLACEHOLDER_TEXT);
        let specials = SpecialTokens { end_think, end_of_sequence, ..probe.specials };
        specials.validate()?;
        Ok(Self { url: probe.url, timeout, specials })
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        route: &str,
        request: &Req,
    ) -> Result<Resp, Error> {
        let body = serde_json::to_string(request).expect("wire requests serialize");
        let (status, response) = http_post_json(&self.url, route, &body, self.timeout)?;
        if status != 200 {
            let snippet: String = response.chars().take(200).collect();
            return Err(Error::BackendUnavailable(format!(
                "{} returned HTTP {status}: {snippet}",
                self.url.display_for(route)
            )));
        }
        serde_json::from_str(&response)
            .map_err(|e| Error::Protocol(format!("response to {route} is not valid JSON: {e}")))
    }
}

impl TokenBackend for RemoteBackend {
    fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, Error> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let resp: TokenizeResponse = self.post("/v1/tokenize", &TokenizeRequest { text })?;
        if resp.ids.len() != resp.texts.len() {
            return Err(Error::Protocol(format!(
                "tokenize returned {} ids but {} texts",
                resp.ids.len(),
                resp.texts.len()
            )));
        }
        let tokens: Vec<Token> = resp
            .ids
            .into_iter()
            .zip(resp.texts)
            .map(|(id, text)| Token::new(id, text))
            .collect();
        let round_trip: String = tokens.iter().map(|t| t.text.as_str()).collect();
        if round_trip != text {
            return Err(Error::Protocol(format!(
                "tokenize does not round-trip: {text:?} came back as {round_trip:?}"
            )));
        }
        Ok(tokens)
    }

    fn next_distribution(
        &self,
        question: &[Token],
        generated: &[Token],
        top_k: usize,
    ) -> Result<TokenDistribution, Error> {
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if question.is_empty() && generated.is_empty() {
            return Err(Error::Config("context must be non-empty".into()));
        }
        let context_ids: Vec<u32> =
            question.iter().chain(generated).map(|t| t.id).collect();
        let resp: NextResponse =
            self.post("/v1/next", &NextRequest { context_ids: &context_ids, top_k })?;
        if resp.candidates.is_empty() {
            return Err(Error::Protocol("candidate list in response is empty".into()));
        }
        let mut cands = Vec::with_capacity(resp.candidates.len());
        for c in resp.candidates {
            if !c.logprob.is_finite() && c.logprob != f64::NEG_INFINITY {
                return Err(Error::Protocol(format!(
                    "logprob {} for token {} is not finite",
                    c.logprob, c.id
                )));
            }
            let p = c.logprob.exp();
            if p > 1.0 + crate::backend::PROBABILITY_SUM_TOLERANCE {
                return Err(Error::Protocol(format!(
                    "logprob {} for token {} implies probability {p} > 1",
                    c.logprob, c.id
                )));
            }
            cands.push((Token::new(c.id, c.text), p.min(1.0)));
        }
        cands.sort_by(|(a, pa), (b, pb)| {
            pb.partial_cmp(pa).expect("probabilities are finite").then(a.id.cmp(&b.id))
        });
        TokenDistribution::try_new(cands, generated.len() as u64).map_err(Error::Protocol)
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Host/port/path triple for the plain-HTTP transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParsedUrl {
    host: String,
    port: u16,
    path_prefix: String,
}

impl ParsedUrl {
    fn display_for(&self, route: &str) -> String {
        format!("http://{}:{}{}{route}", self.host, self.port, self.path_prefix)
    }
}

pub(crate) fn parse_http_url(url: &str) -> Result<ParsedUrl, Error> {
    let url = url.trim();
    if let Some(rest) = url.strip_prefix("https://") {
        let _ = rest;
        return Err(Error::Config(
            "https:// endpoints are not supported by this build; use http:// \
             (for TLS, front the server with a local plaintext proxy)"
                .into(),
        ));
    }
    let rest = url.strip_prefix("http://").ok_or_else(|| {
        Error::Config(format!("backend URL {url:?} must start with http://"))
    })?;
    let (hostport, path) = match rest.find('/') {
        Some(i) => (&rest[..i], rest[i..].trim_end_matches('/')),
        None => (rest, ""),
    };
    let (host, port) = match hostport.rsplit_once(':') {
        Some((h, p)) => {
            let port: u16 = p
                .parse()
                .map_err(|_| Error::Config(format!("invalid port in backend URL: {p:?}")))?;
            (h, port)
        }
        None => (hostport, 80),
    };
    if host.is_empty() {
        return Err(Error::Config(format!("backend URL {url:?} has no host")));
    }
    Ok(ParsedUrl { host: host.to_string(), port, path_prefix: path.to_string() })
}

/// Minimal HTTP/1.1 POST with a JSON body. Returns (status, body).
pub(crate) fn http_post_json(
    url: &ParsedUrl,
    route: &str,
    body: &str,
    timeout: Duration,
) -> Result<(u16, String), Error> {
    let unavailable =
        |what: String| Error::BackendUnavailable(format!("{}: {what}", url.display_for(route)));

    let mut addrs = (url.host.as_str(), url.port)
        .to_socket_addrs()
        .map_err(|e| unavailable(format!("address resolution failed: {e}")))?;
    let addr = addrs.next().ok_or_else(|| unavailable("no address resolved".into()))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout)
        .map_err(|e| unavailable(format!("connect failed: {e}")))?;
    stream.set_read_timeout(Some(timeout)).map_err(|e| unavailable(e.to_string()))?;
    stream.set_write_timeout(Some(timeout)).map_err(|e| unavailable(e.to_string()))?;

    let path = format!("{}{}", url.path_prefix, route);
    let request = format!(
        "POST {path} HTTP/1.1\r\nHost: {}:{}\r\nContent-Type: application/json\r\n\
         Content-Length: {}\r\nAccept: application/json\r\nConnection: close\r\n\r\n{body}",
        url.host,
        url.port,
        body.len(),
    );
    stream
        .write_all(request.as_bytes())
        .map_err(|e| unavailable(format!("request write failed: {e}")))?;

    // Read the full response; Connection: close bounds it.
    let mut raw = Vec::new();
    let mut chunk = [0u8; 8192];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => break find_header_end(&raw).ok_or_else(|| {
                Error::Protocol("connection closed before response headers completed".into())
            })?,
            Ok(n) => {
                raw.extend_from_slice(&chunk[..n]);
                if let Some(end) = find_header_end(&raw) {
                    break end;
                }
                if raw.len() > 1 << 20 {
                    return Err(Error::Protocol("response headers exceed 1 MiB".into()));
                }
            }
            Err(e) if is_timeout(&e) => {
                return Err(unavailable(format!("timed out after {timeout:?}")))
            }
            Err(e) => return Err(unavailable(format!("read failed: {e}"))),
        }
    };

    let head = String::from_utf8_lossy(&raw[..header_end]).to_string();
    let (status, content_length, chunked) = parse_response_head(&head)?;
    if chunked {
        return Err(Error::Protocol(
            "chunked transfer encoding is not supported; the server must send \
             Content-Length or close the connection"
                .into(),
        ));
    }

    let mut body_bytes = raw[header_end + 4..].to_vec();
    let target = content_length;
    loop {
        if let Some(t) = target {
            if body_bytes.len() >= t {
                body_bytes.truncate(t);
                break;
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => body_bytes.extend_from_slice(&chunk[..n]),
            Err(e) if is_timeout(&e) => {
                return Err(unavailable(format!("timed out after {timeout:?}")))
            }
            Err(e) => return Err(unavailable(format!("read failed: {e}"))),
        }
    }
    if let Some(t) = target {
        if body_bytes.len() < t {
            return Err(Error::Protocol(format!(
                "response body truncated: expected {t} bytes, got {}",
                body_bytes.len()
            )));
        }
    }
    let body = String::from_utf8(body_bytes)
        .map_err(|_| Error::Protocol("response body is not valid UTF-8".into()))?;
    Ok((status, body))
}

fn find_header_end(raw: &[u8]) -> Option<usize> {
    raw.windows(4).position(|w| w == b"\r\n\r\n")
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}

/// Parse the status line and the two headers we care about.
fn parse_response_head(head: &str) -> Result<(u16, Option<usize>, bool), Error> {
    let mut lines = head.lines();
    let status_line = lines.next().unwrap_or("");
    let mut parts = status_line.split_whitespace();
    let version = parts.next().unwrap_or("");
    if !version.starts_with("HTTP/1.") {
        return Err(Error::Protocol(format!("unexpected status line: {status_line:?}")));
    }
    let status: u16 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Protocol(format!("unparseable status line: {status_line:?}")))?;
    let mut content_length = None;
    let mut chunked = false;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else { continue };
        let name = name.trim().to_ascii_lowercase();
        let value = value.trim();
        if name == "content-length" {
            content_length = Some(value.parse().map_err(|_| {
                Error::Protocol(format!("invalid Content-Length: {value:?}"))
            })?);
        } else if name == "transfer-encoding" && value.to_ascii_lowercase().contains("chunked") {
            chunked = true;
        }
    }
    Ok((status, content_length, chunked))
}
