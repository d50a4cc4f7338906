//! The abstract next-token-distribution interface the decoding controllers
//! drive, plus the three interchangeable backends behind it:
//!
//! * [`mock`] — a seeded stochastic mock that synthesizes a certainty
//!   trajectory (desk-scale stand-in for a real reasoning model),
//! * [`trace`] — scripted replay of a recorded generation,
//! * [`remote`] — a client for a model server speaking a small JSON/HTTP
//!   protocol.
//!
//! A backend answers one question: given the prompt tokens and the tokens
//! generated so far, what are the top-k most probable next tokens? The
//! controllers only ever consume the argmax (greedy, temperature-0 decoding);
//! the rest of the distribution feeds the certainty metric.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub mod mock;
pub mod remote;
pub mod trace;

pub use mock::{MockBackend, MockProfile};
pub use remote::RemoteBackend;
pub use trace::TraceBackend;

/// A vocabulary entry: numeric id plus its exact surface text.
///
/// Detokenizing `[id]` yields `text` exactly; ids are unique within one
/// backend's vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub id: u32,
    pub text: String,
}

impl Token {
    pub fn new(id: u32, text: impl Into<String>) -> Self {
        Token { id, text: text.into() }
    }
}

/// Concatenate token surface forms back into text.
pub fn detokenize(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

/// Top-k candidate next tokens with probabilities at one decoding step.
///
/// Candidates are ordered by probability, strictly descending after breaking
/// ties by ascending token id, so greedy decoding is fully deterministic.
/// Probabilities are raw (no renormalization after top-k truncation); their
/// sum may fall short of 1 but never exceeds it beyond float tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub candidates: Vec<(Token, f64)>,
    /// Length of the generated suffix at the time of this prediction.
    pub step_index: u64,
}

/// Tolerance on the probability-sum invariant (top-k truncation allowed).
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

impl TokenDistribution {
    /// Validate and construct. Returns a human-readable reason on failure;
    /// callers wrap it in their own error variant (trace format, protocol…).
    pub fn try_new(candidates: Vec<(Token, f64)>, step_index: u64) -> Result<Self, String> {
        if candidates.is_empty() {
            return Err("candidate list is empty".into());
        }
        let mut sum = 0.0;
        for (tok, p) in &candidates {
            if !p.is_finite() || *p < 0.0 || *p > 1.0 {
                return Err(format!("probability {p} for token {} out of [0,1]", tok.id));
            }
            sum += p;
        }
        if sum > 1.0 + PROBABILITY_SUM_TOLERANCE {
            return Err(format!("probabilities sum to {sum}, exceeding 1"));
        }
        for pair in candidates.windows(2) {
            let (ref a, pa) = pair[0];
            let (ref b, pb) = pair[1];
            let ordered = pa > pb || (pa == pb && a.id < b.id);
            if !ordered {
                return Err(format!(
                    "candidates not sorted: ({}, {pa}) before ({}, {pb})",
                    a.id, b.id
                ));
            }
        }
        Ok(TokenDistribution { candidates, step_index })
    }

    /// The argmax candidate (first after sorting).
    pub fn top(&self) -> &(Token, f64) {
        &self.candidates[0]
    }

    /// The leading `k` candidates as a new distribution (sorted-truncation
    /// prefix property: `truncated(j)` is a prefix of `truncated(k)` for
    /// j ≤ k).
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.max(1).min(self.candidates.len());
        TokenDistribution {
            candidates: self.candidates[..k].to_vec(),
            step_index: self.step_index,
        }
    }
}

/// The tokens and strings the controllers treat specially.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialTokens {
    /// The end-of-thinking token separating reasoning from the answer.
    pub end_think: Token,
    pub end_of_sequence: Token,
    /// Continuation cue substituted for a suppressed stop attempt.
    pub wait_text: String,
    /// Text appended to force an answer decode. When the thinking region is
    /// still open, the end_think token is prepended to this first.
    pub answer_prefix_text: String,
    /// Token text that terminates a forced answer.
    pub answer_close_text: String,
}

pub const DEFAULT_WAIT_TEXT: &str = "\nWait";
pub const DEFAULT_ANSWER_PREFIX: &str = "Final Answer: \\boxed{";
pub const DEFAULT_ANSWER_CLOSE: &str = "}";

impl SpecialTokens {
    /// Build the default special set against a vocabulary that contains the
    /// "</think>" and "<eos>" entries (the bundled default vocabulary does).
    pub fn default_for(vocab: &Vocabulary) -> Result<Self, Error> {
        let end_think = vocab
            .token_by_text("</think>")
            .ok_or_else(|| Error::Config("vocabulary has no \"</think>\" token".into()))?;
        let end_of_sequence = vocab
            .token_by_text("<eos>")
            .ok_or_else(|| Error::Config("vocabulary has no \"<eos>\" token".into()))?;
        let specials = SpecialTokens {
            end_think,
            end_of_sequence,
            wait_text: DEFAULT_WAIT_TEXT.into(),
            answer_prefix_text: DEFAULT_ANSWER_PREFIX.into(),
            answer_close_text: DEFAULT_ANSWER_CLOSE.into(),
        };
        specials.validate()?;
        Ok(specials)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.end_think.id == self.end_of_sequence.id {
            return Err(Error::Config(
                "end_think and end_of_sequence must be distinct tokens".into(),
            ));
        }
        if self.wait_text.is_empty() {
            return Err(Error::Config("wait_text must tokenize to at least one token".into()));
        }
        Ok(())
    }
}

/// A token inventory with greedy longest-match tokenization.
///
/// Multi-character entries (like "</think>") win over their single-character
/// spellings; any text whose characters are all covered round-trips exactly.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    by_id: HashMap<u32, String>,
    by_text: HashMap<String, u32>,
    max_text_bytes: usize,
}

impl Vocabulary {
    /// Construct from (id, text) pairs. Ids and texts must both be unique
    /// and texts non-empty, otherwise tokenization would be ambiguous.
    pub fn new(entries: impl IntoIterator<Item = (u32, String)>) -> Result<Self, Error> {
        let mut by_id = HashMap::new();
        let mut by_text = HashMap::new();
        let mut max_text_bytes = 0;
        for (id, text) in entries {
            if text.is_empty() {
                return Err(Error::Config(format!("vocabulary token {id} has empty text")));
            }
            max_text_bytes = max_text_bytes.max(text.len());
            if by_id.insert(id, text.clone()).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary id {id}")));
            }
            if by_text.insert(text.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary text {text:?}")));
            }
        }
        Ok(Vocabulary { by_id, by_text, max_text_bytes })
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        self.by_id.get(&id).map(|text| Token::new(id, text.clone()))
    }

    pub fn token_by_text(&self, text: &str) -> Option<Token> {
        self.by_text.get(text).map(|&id| Token::new(id, text.to_string()))
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.by_text.contains_key(text)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// All entries, ascending by id (stable order for serialization).
    pub fn entries(&self) -> Vec<Token> {
        let mut all: Vec<Token> =
            self.by_id.iter().map(|(&id, text)| Token::new(id, text.clone())).collect();
        all.sort_by_key(|t| t.id);
        all
    }

    /// Greedy longest-match tokenization. Any character not covered by the
    /// vocabulary is a tokenization error naming the offending character.
    pub fn tokenize(&self, text: &str) -> Result<Vec<Token>, Error> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let budget = (bytes.len() - i).min(self.max_text_bytes);
            let mut matched = None;
            for len in (1..=budget).rev() {
                if !text.is_char_boundary(i + len) {
                    continue;
                }
                if let Some(&id) = self.by_text.get(&text[i..i + len]) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(Token::new(id, text[i..i + len].to_string()));
                    i += len;
                }
                None => {
                    let ch = text[i..].chars().next().unwrap();
                    return Err(Error::Tokenization(format!(
                        "character {ch:?} at byte {i} is not covered by the vocabulary"
                    )));
                }
            }
        }
        Ok(out)
    }
}

/// The bundled default vocabulary used by the mock backend and the stub
/// fixtures: id 0 is `<eos>`, id 1 is `</think>`, then every printable ASCII
/// character, newline, tab, and a handful of multi-character filler words the
/// mock emits while "thinking".
pub fn default_vocab() -> Vocabulary {
    let mut entries: Vec<(u32, String)> = vec![(0, "<eos>".into()), (1, "</think>".into())];
    let mut next = 2u32;
    for b in 0x20u8..=0x7e {
        entries.push((next, (b as char).to_string()));
        next += 1;
    }
    entries.push((next, "\n".into()));
    next += 1;
    entries.push((next, "\t".into()));
    next += 1;
    for word in FILLER_WORDS {
        entries.push((next, (*word).into()));
        next += 1;
    }
    Vocabulary::new(entries).expect("default vocabulary is statically well-formed")
}

/// Multi-character filler the mock emits in the thinking region. None of
/// these occur inside the answer-forcing prefix, so the mock can detect a
/// probe suffix unambiguously.
pub(crate) const FILLER_WORDS: &[&str] = &[
    " consider", " suppose", " therefore", " because", " expand", " simplify", " factor",
    " substitute", " observe", " combine", " rewrite", " compare", " deduce", " verify",
    " conclude", " recheck",
];

/// Abstract next-token-distribution source.
///
/// The prompt and the generated suffix are passed separately: the split is
/// what lets stateless backends (replay, mock) key their behavior off the
/// generation step without private bookkeeping. Implementations must be safe
/// to share across threads; per-session state stays with the caller.
pub trait TokenBackend: Send + Sync {
    /// The control tokens and strings this backend understands.
    fn specials(&self) -> &SpecialTokens;

    /// Deterministic text → token mapping for this backend's vocabulary.
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, Error>;

    /// Top-`top_k` next tokens given `question` (prompt tokens) and
    /// `generated` (suffix produced so far). `step_index` of the result is
    /// `generated.len()`.
    fn next_distribution(
        &self,
        question: &[Token],
        generated: &[Token],
        top_k: usize,
    ) -> Result<TokenDistribution, Error>;

    /// Maximum combined context length this backend accepts.
    fn max_context(&self) -> usize {
        usize::MAX
    }

    /// Whether identical inputs always yield identical outputs. Threshold
    /// sweeps and rerun-determinism checks require this.
    fn is_deterministic(&self) -> bool;
}

/// Parsed backend selector: the `--backend`/`--probe-backend` grammar.
///
/// * `mock` or `mock:key=value,...` — keys: `crossing_step` (integer or
///   `none`), `pre`, `post`, `noise` (floats), `stops` (`+`-separated steps),
///   `digits` (1–3 digit characters), `max_context` (testing aid).
/// * `trace:PATH` — everything after the first `:` is the path, verbatim.
/// * `remote:URL[,timeout_ms=N][,eos_id=N][,end_think_id=N]` — URL is the
///   first comma-segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock { profile: MockProfile, max_context: Option<usize> },
    Trace { path: String },
    Remote {
        url: String,
        timeout_ms: u64,
        eos_id: Option<u32>,
        end_think_id: Option<u32>,
    },
}

pub const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 30_000;

impl BackendSpec {
    /// Instantiate the backend this spec describes. `seed` drives the mock's
    /// noise stream and is ignored by trace and remote backends. Remote
    /// construction performs a reachability ping (fail fast before any run
    /// work starts).
    pub fn instantiate(&self, seed: u64) -> Result<Arc<dyn TokenBackend>, Error> {
        match self {
            BackendSpec::Mock { profile, max_context } => {
                let vocab = default_vocab();
                let specials = SpecialTokens::default_for(&vocab)?;
                let mut backend = MockBackend::build(seed, profile.clone(), vocab, specials)?;
                if let Some(max) = max_context {
                    backend = backend.with_max_context(*max);
                }
                Ok(Arc::new(backend))
            }
            BackendSpec::Trace { path } => Ok(Arc::new(TraceBackend::load(path)?)),
            BackendSpec::Remote { url, timeout_ms, eos_id, end_think_id } => {
                Ok(Arc::new(RemoteBackend::connect(
                    url,
                    std::time::Duration::from_millis(*timeout_ms),
                    *eos_id,
                    *end_think_id,
                )?))
            }
        }
    }

    /// True when every backend built from this spec is deterministic.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, BackendSpec::Remote { .. })
    }
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        match kind {
            "mock" => parse_mock_spec(rest.unwrap_or("")),
            "trace" => {
                let path = rest.unwrap_or("").trim();
                if path.is_empty() {
                    return Err(Error::Config("trace backend needs a path: trace:PATH".into()));
                }
                Ok(BackendSpec::Trace { path: path.to_string() })
            }
            "remote" => parse_remote_spec(rest.unwrap_or("")),
            other => Err(Error::UnknownBackend(other.to_string())),
        }
    }
}

fn parse_mock_spec(params: &str) -> Result<BackendSpec, Error> {
    let mut profile = MockProfile::default();
    let mut max_context = None;
    for part in params.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("mock parameter {part:?} is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::Config(format!("mock parameter {key}={value:?}: {what}"));
        match key {
            "crossing_step" => {
                profile.crossing_step = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("expected integer or none"))?)
                };
            }
            "pre" => profile.pre_certainty = value.parse().map_err(|_| bad("expected float"))?,
            "post" => profile.post_certainty = value.parse().map_err(|_| bad("expected float"))?,
            "noise" => {
                profile.noise_amplitude = value.parse().map_err(|_| bad("expected float"))?
            }
            "stops" => {
                profile.stop_attempt_steps = value
                    .split('+')
                    .filter(|v| !v.is_empty())
                    .map(|v| v.parse().map_err(|_| bad("expected +-separated integers")))
                    .collect::<Result<Vec<u64>, Error>>()?;
            }
            "digits" => {
                profile.answer_digits = value
                    .chars()
                    .map(|c| {
                        c.to_digit(10).map(|d| d as u8).ok_or_else(|| bad("expected digits 0-9"))
                    })
                    .collect::<Result<Vec<u8>, Error>>()?;
            }
            "max_context" => {
                max_context = Some(value.parse().map_err(|_| bad("expected integer"))?)
            }
            _ => return Err(Error::Config(format!("unknown mock parameter {key:?}"))),
        }
    }
    profile.validate()?;
    Ok(BackendSpec::Mock { profile, max_context })
}

fn parse_remote_spec(params: &str) -> Result<BackendSpec, Error> {
    let mut parts = params.split(',');
    let url = parts.next().unwrap_or("").trim().to_string();
    if url.is_empty() {
        return Err(Error::Config("remote backend needs a URL: remote:http://host:port".into()));
    }
    let mut timeout_ms = DEFAULT_REMOTE_TIMEOUT_MS;
    let mut eos_id = None;
    let mut end_think_id = None;
    for part in parts.filter(|p| !p.trim().is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("remote parameter {part:?} is not key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let bad =
            |_| Error::Config(format!("remote parameter {key}={value:?}: expected integer"));
        match key {
            "timeout_ms" => timeout_ms = value.parse().map_err(bad)?,
            "eos_id" => eos_id = Some(value.parse().map_err(bad)?),
            "end_think_id" => end_think_id = Some(value.parse().map_err(bad)?),
            _ => return Err(Error::Config(format!("unknown remote parameter {key:?}"))),
        }
    }
    Ok(BackendSpec::Remote { url, timeout_ms, eos_id, end_think_id })
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock { profile, max_context } => {
                write!(f, "mock:")?;
                match profile.crossing_step {
                    Some(s) => write!(f, "crossing_step={s}")?,
                    None => write!(f, "crossing_step=none")?,
                }
                write!(f, ",pre={},post={}", profile.pre_certainty, profile.post_certainty)?;
                write!(f, ",noise={}", profile.noise_amplitude)?;
                if !profile.stop_attempt_steps.is_empty() {
                    let stops: Vec<String> =
                        profile.stop_attempt_steps.iter().map(|s| s.to_string()).collect();
                    write!(f, ",stops={}", stops.join("+"))?;
                }
                let digits: String =
                    profile.answer_digits.iter().map(|d| char::from(b'0' + d)).collect();
                write!(f, ",digits={digits}")?;
                if let Some(max) = max_context {
                    write!(f, ",max_context={max}")?;
                }
                Ok(())
            }
            BackendSpec::Trace { path } => write!(f, "trace:{path}"),
            BackendSpec::Remote { url, timeout_ms, eos_id, end_think_id } => {
                write!(f, "remote:{url},timeout_ms={timeout_ms}")?;
                if let Some(id) = eos_id {
                    write!(f, ",eos_id={id}")?;
                }
                if let Some(id) = end_think_id {
                    write!(f, ",end_think_id={id}")?;
                }
                Ok(())
            }
        }
    }
}
