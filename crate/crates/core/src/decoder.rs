//! Token-level decode loops: baseline decoding, budget forcing, and
//! certainty-guided early exit, plus the forced answer extraction they all
//! share.
//!
//! The decoder treats the generation backend and the probe backend as
//! separate roles. Probes fork the context and never leak tokens back into
//! the main stream; the returned trace separates thinking tokens (counted
//! against the budget) from probe overhead (bookkept, never counted).

use serde::{Deserialize, Serialize};

use crate::backend::{detokenize, Token, TokenBackend};
use crate::certainty::{answer_certainty, certainty_probe, ProbeResult, ProbeTrigger};
use crate::error::Error;

/// Candidates examined per step during forced answer decoding. Wider than
/// the greedy top-1 so the argmax can skip a stop token that outranks every
/// digit.
const FORCED_ANSWER_TOP_K: usize = 8;

/// Which control loop drives decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodingMode {
    /// Greedy decode until a stop token or the budget; no intervention.
    Baseline,
    /// Stop tokens are replaced with a continuation cue until the budget
    /// is spent; the model is never allowed to stop early.
    BudgetForcing,
    /// Periodic certainty probes; exit as soon as an answer certifies.
    Cgr,
    /// Budget forcing plus probes: a stop attempt is honored only when the
    /// current answer certifies, otherwise the model is pushed onward.
    CgrWithForcing,
}

impl DecodingMode {
    pub const ALL: [DecodingMode; 4] = [
        DecodingMode::Baseline,
        DecodingMode::BudgetForcing,
        DecodingMode::Cgr,
        DecodingMode::CgrWithForcing,
    ];

    /// Whether this mode runs interval certainty probes.
    pub fn probes(self) -> bool {
        matches!(self, DecodingMode::Cgr | DecodingMode::CgrWithForcing)
    }

    /// Whether this mode substitutes continuation cues for stop tokens.
    pub fn forces(self) -> bool {
        matches!(self, DecodingMode::BudgetForcing | DecodingMode::CgrWithForcing)
    }
}

impl std::fmt::Display for DecodingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DecodingMode::Baseline => "baseline",
            DecodingMode::BudgetForcing => "budget-forcing",
            DecodingMode::Cgr => "cgr",
            DecodingMode::CgrWithForcing => "cgr-with-forcing",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for DecodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(DecodingMode::Baseline),
            "budget-forcing" => Ok(DecodingMode::BudgetForcing),
            "cgr" => Ok(DecodingMode::Cgr),
            "cgr-with-forcing" => Ok(DecodingMode::CgrWithForcing),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected baseline, budget-forcing, cgr, \
                 or cgr-with-forcing"
            ))),
        }
    }
}

/// Why decoding stopped. The step payload is the thinking-token count at
/// the moment of stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    /// The thinking budget was spent.
    BudgetExhausted,
    /// An interval probe certified the answer before any stop token.
    EarlyExitCertainty { step: u64 },
    /// Under forcing, the model tried to stop and the probe agreed.
    NaturalStopCertified { step: u64 },
    /// Without forcing, the model stopped on its own.
    NaturalStop { step: u64 },
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::BudgetExhausted => write!(f, "budget_exhausted"),
            StopReason::EarlyExitCertainty { step } => write!(f, "early_exit_certainty({step})"),
            StopReason::NaturalStopCertified { step } => {
                write!(f, "natural_stop_certified({step})")
            }
            StopReason::NaturalStop { step } => write!(f, "natural_stop({step})"),
        }
    }
}

impl StopReason {
    /// The thinking-token count at stop, when the reason carries one.
    pub fn step(&self) -> Option<u64> {
        match self {
            StopReason::BudgetExhausted => None,
            StopReason::EarlyExitCertainty { step }
            | StopReason::NaturalStopCertified { step }
            | StopReason::NaturalStop { step } => Some(*step),
        }
    }

    /// Stable machine name of the variant, without the step payload.
    pub fn kind(&self) -> &'static str {
        match self {
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::EarlyExitCertainty { .. } => "early_exit_certainty",
            StopReason::NaturalStopCertified { .. } => "natural_stop_certified",
            StopReason::NaturalStop { .. } => "natural_stop",
        }
    }
}

/// Knobs for one decode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Maximum thinking tokens (B).
    pub budget: u64,
    /// Certainty threshold (θ) a probe must reach to certify a stop.
    pub threshold: f64,
    /// Probe every this many thinking tokens (I).
    pub probe_interval: u64,
    /// Cap on tokens decoded during forced answer extraction.
    pub max_answer_tokens: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { budget: 32_000, threshold: 0.97, probe_interval: 1_000, max_answer_tokens: 4 }
    }
}

/// The forced answer decode: recorded answer tokens with their argmax
/// probabilities, and the parsed value when the tokens form a valid answer.
///
/// When `parsed_value` is `Some`, `digit_tokens` holds one to three tokens
/// whose concatenated text is all ASCII digits encoding a value in 0..=999
/// (leading zeros allowed: "042" parses to 42). Any other shape parses to
/// `None` and is treated as an abstention downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDecode {
    pub digit_tokens: Vec<(Token, f64)>,
    pub parsed_value: Option<u16>,
}

/// A graded prediction: a concrete numeric answer, or an abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Option<u16>", into = "Option<u16>")]
pub enum Prediction {
    Answer(u16),
    Abstain,
}

impl From<Option<u16>> for Prediction {
    fn from(v: Option<u16>) -> Self {
        match v {
            Some(a) => Prediction::Answer(a),
            None => Prediction::Abstain,
        }
    }
}

impl From<Prediction> for Option<u16> {
    fn from(p: Prediction) -> Self {
        match p {
            Prediction::Answer(a) => Some(a),
            Prediction::Abstain => None,
        }
    }
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prediction::Answer(a) => write!(f, "{a}"),
            Prediction::Abstain => f.write_str("abstain"),
        }
    }
}

/// Map a forced answer decode to the prediction it grades as.
pub fn extract_answer(answer: &AnswerDecode) -> Prediction {
    Prediction::from(answer.parsed_value)
}

/// Complete record of one decode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub question_id: String,
    /// The thinking stream actually decoded (probe forks excluded).
    pub tokens: Vec<Token>,
    /// Thinking tokens counted against the budget; equals `tokens.len()`.
    pub thinking_tokens_used: u64,
    pub budget: u64,
    /// Stop tokens replaced with continuation cues (forcing modes only).
    pub forced_wait_count: u64,
    /// Every interval and stop-attempt probe, in firing order.
    pub probe_events: Vec<ProbeResult>,
    pub stop_reason: StopReason,
    /// The answer extraction that ends every run.
    pub final_answer: AnswerDecode,
    /// Certainty of `final_answer` (minimum answer-token probability).
    pub final_certainty: f64,
    /// Tokens generated inside probe forks; never counted against the
    /// budget.
    pub probe_overhead_tokens: u64,
}

/// What had been decoded when a run failed; attached to [`DecodeError`] so
/// partial work is never silently discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialTrace {
    pub question_id: String,
    pub tokens: Vec<Token>,
    pub thinking_tokens_used: u64,
    pub forced_wait_count: u64,
    pub probe_events: Vec<ProbeResult>,
    pub probe_overhead_tokens: u64,
}

/// A decode failure with the partial trace up to the failure point.
#[derive(Debug)]
pub struct DecodeError {
    pub source: Error,
    pub partial: PartialTrace,
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "decoding {} failed after {} thinking tokens: {}",
            self.partial.question_id, self.partial.thinking_tokens_used, self.source
        )
    }
}

impl std::error::Error for DecodeError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<DecodeError> for Error {
    fn from(e: DecodeError) -> Self {
        e.source
    }
}

/// The generation backend and the probe backend for one run. `same` tells
/// the decoder whether probe contexts can reuse the generator's tokens
/// verbatim or must be re-tokenized into the probe model's vocabulary.
#[derive(Clone, Copy)]
pub struct BackendPair<'a> {
    pub gen: &'a dyn TokenBackend,
    pub probe: &'a dyn TokenBackend,
    pub same: bool,
}

impl<'a> BackendPair<'a> {
    /// One backend playing both roles.
    pub fn single(backend: &'a dyn TokenBackend) -> Self {
        BackendPair { gen: backend, probe: backend, same: true }
    }

    /// Explicitly distinct generator and probe models.
    pub fn split(gen: &'a dyn TokenBackend, probe: &'a dyn TokenBackend) -> Self {
        BackendPair { gen, probe, same: false }
    }

    /// Distinct roles, collapsing to `single` when both references point
    /// at the same instance.
    pub fn distinct_unless_same(
        gen: &'a dyn TokenBackend,
        probe: &'a dyn TokenBackend,
    ) -> Self {
        let same = std::ptr::eq(
            gen as *const dyn TokenBackend as *const (),
            probe as *const dyn TokenBackend as *const (),
        );
        BackendPair { gen, probe, same }
    }
}

/// Fork the context and force an answer out of the backend.
///
/// If the thinking region is still open (no end-think token in
/// `generated`), the fork closes it first; then the answer prefix is
/// appended and up to `max_answer_tokens` tokens are decoded greedily,
/// skipping the end-think token among the candidates so a lingering stop
/// preference cannot mask the digits. Decoding ends at the closing
/// delimiter or end-of-sequence, neither of which is recorded. The caller's
/// context is never modified.
pub fn force_answer(
    question: &[Token],
    generated: &[Token],
    backend: &dyn TokenBackend,
    max_answer_tokens: usize,
) -> Result<AnswerDecode, Error> {
    force_answer_counted(question, generated, backend, max_answer_tokens, None).map(|(a, _)| a)
}

/// `force_answer` plus the number of backend steps it consumed, so probe
/// overhead can be accounted. `region_open` short-circuits the end-think
/// scan when the caller already tracks it.
pub(crate) fn force_answer_counted(
    question: &[Token],
    generated: &[Token],
    backend: &dyn TokenBackend,
    max_answer_tokens: usize,
    region_open: Option<bool>,
) -> Result<(AnswerDecode, u64), Error> {
    let specials = backend.specials();
    let end_think = specials.end_think.clone();
    let eos_id = specials.end_of_sequence.id;
    let close_text = specials.answer_close_text.clone();

    let open = region_open
        .unwrap_or_else(|| !generated.iter().any(|t| t.id == end_think.id));
    let mut fork: Vec<Token> = Vec::with_capacity(generated.len() + 8);
    fork.extend_from_slice(generated);
    if open {
        fork.push(end_think.clone());
    }
    fork.extend(backend.tokenize(&specials.answer_prefix_text)?);

    let mut digit_tokens: Vec<(Token, f64)> = Vec::new();
    let mut steps = 0u64;
    for _ in 0..max_answer_tokens {
        let dist = backend.next_distribution(question, &fork, FORCED_ANSWER_TOP_K)?;
        steps += 1;
        // The end-think token is not a legal answer character; take the
        // best candidate that isn't it.
        let Some((tok, p)) = dist
            .candidates
            .iter()
            .find(|(t, _)| t.id != end_think.id)
            .map(|(t, p)| (t.clone(), *p))
        else {
            break;
        };
        if tok.id == eos_id || tok.text == close_text {
            break;
        }
        fork.push(tok.clone());
        digit_tokens.push((tok, p));
    }

    let parsed_value = parse_answer(&digit_tokens);
    Ok((AnswerDecode { digit_tokens, parsed_value }, steps))
}

/// Parse recorded answer tokens into a value: one to three tokens whose
/// concatenated text, after trimming whitespace, is one to three ASCII
/// digits ("042" → 42). Anything else is a parse failure.
fn parse_answer(digit_tokens: &[(Token, f64)]) -> Option<u16> {
    if digit_tokens.is_empty() || digit_tokens.len() > 3 {
        return None;
    }
    let text: String = digit_tokens.iter().map(|(t, _)| t.text.as_str()).collect();
    let trimmed = text.trim();
    if trimmed.is_empty()
        || trimmed.len() > 3
        || !trimmed.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    trimmed.parse::<u16>().ok().filter(|v| *v <= 999)
}

/// Run one full decode of `question` under `mode`.
///
/// The loop generates greedily from the generation backend, counts every
/// appended token (including a naturally emitted end-think token and every
/// substituted continuation-cue token) against the budget, and consults the
/// probe backend according to the mode:
///
/// - `Baseline` stops at the first stop token or the budget.
/// - `BudgetForcing` replaces each stop token with the continuation cue and
///   always runs to the budget.
/// - `Cgr` probes every `probe_interval` thinking tokens and exits early
///   when certainty reaches the threshold; a stop token still stops it.
/// - `CgrWithForcing` probes on stop attempts (honoring certified ones) and
///   on the interval; uncertified stop attempts are overridden with the
///   continuation cue.
///
/// The final answer is always extracted from the generation backend — it is
/// the run's actual prediction — while probes run on the probe backend.
/// Probe forks never mutate the main stream, and their generated tokens are
/// reported as `probe_overhead_tokens`, never spent from the budget.
pub fn decode(
    question_id: &str,
    question: &[Token],
    backends: BackendPair<'_>,
    mode: DecodingMode,
    params: &DecodeParams,
) -> Result<ReasoningTrace, DecodeError> {
    let mut out: Vec<Token> = Vec::new();
    let mut t: u64 = 0;
    let mut forced_wait_count: u64 = 0;
    let mut probe_events: Vec<ProbeResult> = Vec::new();
    let mut probe_overhead: u64 = 0;
    let mut region_closed = false;
    let mut stop: Option<StopReason> = None;

    // Probe contexts must live in the probe model's token space; with a
    // split pair the question is translated once and cached.
    let mut probe_question: Option<Vec<Token>> = None;

    macro_rules! fail {
        ($err:expr) => {
            return Err(DecodeError {
                source: $err,
                partial: PartialTrace {
                    question_id: question_id.to_string(),
                    tokens: out,
                    thinking_tokens_used: t,
                    forced_wait_count,
                    probe_events,
                    probe_overhead_tokens: probe_overhead,
                },
            })
        };
    }

    macro_rules! run_probe {
        ($trigger:expr) => {{
            let probed = if backends.same {
                certainty_probe(question, &out, backends.probe, $trigger, params.max_answer_tokens)
            } else {
                let translated_question = match &probe_question {
                    Some(q) => q,
                    None => {
                        match backends.probe.tokenize(&detokenize(question)) {
                            Ok(q) => probe_question.insert(q),
                            Err(e) => fail!(e),
                        }
                    }
                };
                match backends.probe.tokenize(&detokenize(&out)) {
                    Ok(translated) => certainty_probe(
                        translated_question,
                        &translated,
                        backends.probe,
                        $trigger,
                        params.max_answer_tokens,
                    )
                    .map(|(mut r, cost)| {
                        // Report the generator-side step, not the probe
                        // model's context length.
                        r.step = t;
                        (r, cost)
                    }),
                    Err(e) => fail!(e),
                }
            };
            match probed {
                Ok((result, cost)) => {
                    probe_overhead += cost;
                    let certified = result.certainty >= params.threshold;
                    probe_events.push(result);
                    certified
                }
                Err(e) => fail!(e),
            }
        }};
    }

    let specials = backends.gen.specials().clone();
    let wait_tokens = match backends.gen.tokenize(&specials.wait_text) {
        Ok(toks) if toks.is_empty() => {
            fail!(Error::Config("continuation cue tokenizes to nothing".into()))
        }
        Ok(toks) => toks,
        Err(e) => fail!(e),
    };

    let interval_fires =
        |t: u64| params.probe_interval > 0 && t > 0 && t % params.probe_interval == 0;

    'decode: while t < params.budget {
        let dist = match backends.gen.next_distribution(question, &out, 1) {
            Ok(d) => d,
            Err(e) => fail!(e),
        };
        let (token, _) = dist.top().clone();
        let is_stop_token =
            token.id == specials.end_think.id || token.id == specials.end_of_sequence.id;

        if is_stop_token {
            if !mode.forces() {
                // A natural stop. An emitted end-think token joins the
                // stream and counts; end-of-sequence terminates without
                // being appended.
                if token.id == specials.end_think.id {
                    out.push(token);
                    t += 1;
                    region_closed = true;
                }
                stop = Some(StopReason::NaturalStop { step: t });
                break 'decode;
            }

            // Forcing modes intercept the stop attempt.
            if mode == DecodingMode::CgrWithForcing && run_probe!(ProbeTrigger::StopAttempt) {
                stop = Some(StopReason::NaturalStopCertified { step: t });
                break 'decode;
            }

            // Uncertified (or unprobed, under plain budget forcing):
            // substitute the continuation cue token by token, each one
            // spending budget and eligible to trigger an interval probe.
            forced_wait_count += 1;
            for cue in &wait_tokens {
                if t >= params.budget {
                    stop = Some(StopReason::BudgetExhausted);
                    break 'decode;
                }
                out.push(cue.clone());
                t += 1;
                if mode.probes() && interval_fires(t) && run_probe!(ProbeTrigger::Interval) {
                    stop = Some(StopReason::EarlyExitCertainty { step: t });
                    break 'decode;
                }
            }
            continue 'decode;
        }

        out.push(token);
        t += 1;
        if mode.probes() && interval_fires(t) && run_probe!(ProbeTrigger::Interval) {
            stop = Some(StopReason::EarlyExitCertainty { step: t });
            break 'decode;
        }
    }

    let stop_reason = stop.unwrap_or(StopReason::BudgetExhausted);
    debug_assert_eq!(out.len() as u64, t, "every counted token is in the stream");

    // The run's prediction comes from the generation model; this final
    // extraction is not a probe and adds no probe overhead.
    let final_answer = match force_answer_counted(
        question,
        &out,
        backends.gen,
        params.max_answer_tokens,
        Some(!region_closed),
    ) {
        Ok((answer, _)) => answer,
        Err(e) => fail!(e),
    };
    let final_certainty = answer_certainty(&final_answer);

    Ok(ReasoningTrace {
        question_id: question_id.to_string(),
        tokens: out,
        thinking_tokens_used: t,
        budget: params.budget,
        forced_wait_count,
        probe_events,
        stop_reason,
        final_answer,
        final_certainty,
        probe_overhead_tokens: probe_overhead,
    })
}
