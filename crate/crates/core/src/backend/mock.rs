//! Seeded stochastic mock backend.
//!
//! The mock does not simulate a language model; it models the only two things
//! the controllers can observe — the emitted token stream and the certainty
//! trajectory read back through answer probes:
//!
//! * In the thinking region it emits deterministic filler words, and at each
//!   configured stop-attempt step it emits the end-of-thinking token.
//! * When the context ends in the answer-forcing prefix, it plays out the
//!   profile's answer digits; each digit's argmax probability equals the
//!   profile's certainty level at the probe step (pre before the crossing
//!   step, post at or after), plus optional seeded noise, clamped to [0, 1].
//!
//! Everything is a pure function of (seed, profile, question, generated), so
//! repeated calls are bit-identical and instances can be shared across
//! threads.

use serde::{Deserialize, Serialize};

use crate::backend::{
    SpecialTokens, Token, TokenBackend, TokenDistribution, Vocabulary, FILLER_WORDS,
};
use crate::error::Error;

/// Synthetic certainty trajectory and stop behavior for one mock model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProfile {
    /// Step at which probe certainty first reaches `post_certainty`;
    /// `None` means the trajectory stays at `pre_certainty` forever.
    pub crossing_step: Option<u64>,
    /// Certainty level before the crossing step, in [0, 1).
    pub pre_certainty: f64,
    /// Certainty level at and after the crossing step, in [0, 1].
    pub post_certainty: f64,
    /// Steps at which the mock emits the end-of-thinking token.
    pub stop_attempt_steps: Vec<u64>,
    /// Amplitude of seeded noise added to the certainty level (0 disables
    /// noise entirely, giving exact equality with the configured levels).
    pub noise_amplitude: f64,
    /// The answer the mock produces when probed: 1–3 digit values.
    pub answer_digits: Vec<u8>,
}

impl Default for MockProfile {
    fn default() -> Self {
        MockProfile {
            crossing_step: Some(3000),
            pre_certainty: 0.80,
            post_certainty: 0.99,
            stop_attempt_steps: Vec::new(),
            noise_amplitude: 0.0,
            answer_digits: vec![2, 0, 4],
        }
    }
}

impl MockProfile {
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |m: String| Err(Error::InvalidProfile(m));
        if !self.pre_certainty.is_finite()
            || !(0.0..1.0).contains(&self.pre_certainty)
        {
            return fail(format!("pre_certainty {} outside [0, 1)", self.pre_certainty));
        }
        if !self.post_certainty.is_finite()
            || !(0.0..=1.0).contains(&self.post_certainty)
        {
            return fail(format!("post_certainty {} outside [0, 1]", self.post_certainty));
        }
        if let Some(step) = self.crossing_step {
            if step == 0 {
                return fail("crossing_step must be positive".into());
            }
            if self.pre_certainty >= self.post_certainty {
                return fail(format!(
                    "pre_certainty {} must be below post_certainty {} when a crossing step is set",
                    self.pre_certainty, self.post_certainty
                ));
            }
        }
        if !self.noise_amplitude.is_finite() || self.noise_amplitude < 0.0 {
            return fail(format!("noise_amplitude {} must be finite and >= 0", self.noise_amplitude));
        }
        if self.answer_digits.is_empty() || self.answer_digits.len() > 3 {
            return fail(format!(
                "answer_digits must hold 1-3 digits, got {}",
                self.answer_digits.len()
            ));
        }
        if let Some(d) = self.answer_digits.iter().find(|d| **d > 9) {
            return fail(format!("answer digit {d} outside 0-9"));
        }
        if self.stop_attempt_steps.iter().any(|&s| s == 0) {
            return fail("stop_attempt_steps must be positive".into());
        }
        Ok(())
    }
}

/// Argmax probability for a filler token in the thinking region.
const FILLER_TOP_P: f64 = 0.85;
/// Argmax probability for an emitted end-of-thinking token.
const STOP_TOP_P: f64 = 0.95;
/// Argmax probability for the answer-closing token.
const CLOSE_TOP_P: f64 = 0.99;

/// Fully deterministic synthetic backend. See the module docs.
pub struct MockBackend {
    seed: u64,
    profile: MockProfile,
    vocab: Vocabulary,
    specials: SpecialTokens,
    /// Tokenization of `answer_prefix_text`, matched as a suffix to detect
    /// probe contexts.
    prefix_tokens: Vec<Token>,
    close_token: Token,
    digit_tokens: Vec<Token>,
    filler_tokens: Vec<Token>,
    max_context: usize,
}

/// Build a mock backend. The vocabulary must contain the special tokens, the
/// ten digit tokens, and every character of the answer prefix.
pub fn build_mock(
    seed: u64,
    profile: MockProfile,
    vocab: Vocabulary,
    specials: SpecialTokens,
) -> Result<MockBackend, Error> {
    MockBackend::build(seed, profile, vocab, specials)
}

impl MockBackend {
    pub fn build(
        seed: u64,
        profile: MockProfile,
        vocab: Vocabulary,
        specials: SpecialTokens,
    ) -> Result<Self, Error> {
        profile.validate()?;
        specials.validate()?;
        let missing = |what: &str| Error::Config(format!("mock vocabulary is missing {what}"));
        if !vocab.contains_text(&specials.end_think.text) {
            return Err(missing("the end_think token"));
        }
        if !vocab.contains_text(&specials.end_of_sequence.text) {
            return Err(missing("the end_of_sequence token"));
        }
        let mut digit_tokens = Vec::with_capacity(10);
        for d in '0'..='9' {
            digit_tokens
                .push(vocab.token_by_text(&d.to_string()).ok_or_else(|| missing("digit tokens"))?);
        }
        let prefix_tokens = vocab.tokenize(&specials.answer_prefix_text)?;
        if prefix_tokens.is_empty() {
            return Err(Error::Config("answer_prefix_text tokenized to nothing".into()));
        }
        vocab.tokenize(&specials.wait_text)?;
        let close = vocab.tokenize(&specials.answer_close_text)?;
        if close.len() != 1 {
            return Err(Error::Config(
                "the mock needs answer_close_text to be a single token".into(),
            ));
        }
        let mut filler_tokens = Vec::new();
        for word in FILLER_WORDS {
            if let Some(tok) = vocab.token_by_text(word) {
                filler_tokens.push(tok);
            }
        }
        if filler_tokens.len() < 8 {
            return Err(missing("filler words for the thinking region"));
        }
        Ok(MockBackend {
            seed,
            profile,
            vocab,
            specials,
            prefix_tokens,
            close_token: close.into_iter().next().unwrap(),
            digit_tokens,
            filler_tokens,
            max_context: usize::MAX,
        })
    }

    /// Cap the combined context length (testing aid for overflow handling).
    pub fn with_max_context(mut self, max: usize) -> Self {
        self.max_context = max;
        self
    }

    pub fn profile(&self) -> &MockProfile {
        &self.profile
    }

    /// The certainty level the profile yields when probed after
    /// `thinking_len` reasoning tokens, for the answer digit at
    /// `digit_index`. Noise is applied only when the amplitude is non-zero,
    /// and the result is clamped into [0, 1].
    fn certainty_at(&self, question_hash: u64, thinking_len: u64, digit_index: u64) -> f64 {
        let level = match self.profile.crossing_step {
            Some(crossing) if thinking_len >= crossing => self.profile.post_certainty,
            _ => self.profile.pre_certainty,
        };
        if self.profile.noise_amplitude == 0.0 {
            return level;
        }
        let bits = mix(&[self.seed, question_hash, thinking_len, digit_index, 0x616e73]);
        (level + self.profile.noise_amplitude * unit_pm1(bits)).clamp(0.0, 1.0)
    }

    /// If `generated` ends in the answer-forcing prefix plus at most
    /// digits+1 emitted answer tokens, return (tokens emitted after the
    /// prefix, thinking length before the prefix, not counting a closing
    /// end_think).
    fn detect_probe_suffix(&self, generated: &[Token]) -> Option<(usize, u64)> {
        let plen = self.prefix_tokens.len();
        let max_tail = self.profile.answer_digits.len() + 1;
        for tail in 0..=max_tail {
            if generated.len() < plen + tail {
                break;
            }
            let start = generated.len() - tail - plen;
            let window = &generated[start..start + plen];
            if window.iter().zip(&self.prefix_tokens).all(|(a, b)| a.id == b.id) {
                let mut thinking = start as u64;
                if start > 0 && generated[start - 1].id == self.specials.end_think.id {
                    thinking -= 1;
                }
                return Some((tail, thinking));
            }
        }
        None
    }

    /// Candidate list: `top` first, then geometric runner-ups drawn from
    /// `others`, never overtaking the argmax and never pushing the sum
    /// past 1.
    fn ranked(
        &self,
        top: Token,
        top_p: f64,
        others: impl Iterator<Item = Token>,
        top_k: usize,
        step: u64,
    ) -> Result<TokenDistribution, Error> {
        let mut cands = vec![(top.clone(), top_p)];
        // min(p, 1-p)/2^(j+1) keeps every runner-up strictly below the
        // argmax and the total within 1.
        let base = top_p.min(1.0 - top_p);
        let mut scale = base / 2.0;
        for other in others {
            if cands.len() >= top_k {
                break;
            }
            if other.id == top.id {
                continue;
            }
            cands.push((other, scale));
            scale /= 2.0;
        }
        cands.sort_by(|(a, pa), (b, pb)| {
            pb.partial_cmp(pa).expect("mock probabilities are finite").then(a.id.cmp(&b.id))
        });
        TokenDistribution::try_new(cands, step)
            .map_err(|m| Error::Numerical(format!("mock produced an invalid distribution: {m}")))
    }
}

impl TokenBackend for MockBackend {
    fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, Error> {
        self.vocab.tokenize(text)
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
        let length = question.len() + generated.len();
        if length > self.max_context {
            return Err(Error::ContextOverflow { length, max: self.max_context });
        }
        let step = generated.len() as u64;
        let qhash = hash_tokens(question);

        // Answer mode: the context ends in the forcing prefix.
        if let Some((tail, thinking_len)) = self.detect_probe_suffix(generated) {
            let digits = &self.profile.answer_digits;
            return if tail < digits.len() {
                let digit = self.digit_tokens[digits[tail] as usize].clone();
                let p = self.certainty_at(qhash, thinking_len, tail as u64);
                let runner_ups = (1..10u8)
                    .map(|off| self.digit_tokens[((digits[tail] + off) % 10) as usize].clone());
                self.ranked(digit, p, runner_ups, top_k, step)
            } else if tail == digits.len() {
                let runner_ups = self.filler_tokens.iter().cloned();
                self.ranked(self.close_token.clone(), CLOSE_TOP_P, runner_ups, top_k, step)
            } else {
                // Everything after the closing brace is end-of-sequence.
                TokenDistribution::try_new(
                    vec![(self.specials.end_of_sequence.clone(), 1.0)],
                    step,
                )
                .map_err(|m| Error::Numerical(m))
            };
        }

        // Post-stop fallback: once the stream has closed, only EOS follows.
        if let Some(last) = generated.last() {
            if last.id == self.specials.end_think.id
                || last.id == self.specials.end_of_sequence.id
            {
                return TokenDistribution::try_new(
                    vec![(self.specials.end_of_sequence.clone(), 1.0)],
                    step,
                )
                .map_err(Error::Numerical);
            }
        }

        // Thinking region: stop attempt or deterministic filler.
        if self.profile.stop_attempt_steps.contains(&step) {
            let runner_ups = self.filler_tokens.iter().cloned();
            return self.ranked(
                self.specials.end_think.clone(),
                STOP_TOP_P,
                runner_ups,
                top_k,
                step,
            );
        }
        let pick = mix(&[self.seed, qhash, step, 0x66696c]) as usize % self.filler_tokens.len();
        let top = self.filler_tokens[pick].clone();
        let runner_ups =
            (1..self.filler_tokens.len()).map(|off| {
                self.filler_tokens[(pick + off) % self.filler_tokens.len()].clone()
            });
        self.ranked(top, FILLER_TOP_P, runner_ups, top_k, step)
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// SplitMix64 finalizer: the standard 64-bit avalanche mixer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix several words into one deterministic hash.
fn mix(parts: &[u64]) -> u64 {
    let mut acc = 0x243f_6a88_85a3_08d3u64; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

fn hash_tokens(tokens: &[Token]) -> u64 {
    let mut acc = 0x1319_8a2e_0370_7344u64;
    for t in tokens {
        acc = splitmix64(acc ^ u64::from(t.id));
    }
    acc
}

/// Map hash bits onto [-1, 1).
fn unit_pm1(bits: u64) -> f64 {
    let unit = (bits >> 11) as f64 / (1u64 << 53) as f64; // [0, 1)
    unit * 2.0 - 1.0
}
