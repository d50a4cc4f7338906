//! Min-max answer certainty: the confidence signal the controllers act on.
//!
//! A probe forks the current context, forces an answer decode on the probe
//! backend, and takes the minimum over the answer tokens of each position's
//! argmax probability. A probe that fails to parse an answer has certainty 0
//! and can never certify a stop. The probe backend may be a different model
//! than the generator (a cheaper or specially calibrated analyzer); both
//! default to the same instance.
//!
//! Probabilities are used raw — top-k truncation is never renormalized — so
//! the metric matches the full-softmax definition regardless of how many
//! candidates a backend returns.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::TokenBackend;
use crate::backend::Token;
use crate::decoder::{
    decode, extract_answer, force_answer_counted, AnswerDecode, BackendPair, DecodeParams,
    DecodingMode, Prediction,
};
use crate::error::Error;

/// What caused a probe to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTrigger {
    /// The probe interval fired (every I thinking tokens).
    Interval,
    /// The model emitted a stop token under a forcing mode.
    StopAttempt,
    /// The answer decode that ends every run (not recorded as a probe
    /// event; reported through the trace's final_answer).
    Final,
}

/// One certainty measurement: the forced candidate answer and its min-max
/// certainty at a given thinking step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Thinking-token count at probe time.
    pub step: u64,
    pub answer: AnswerDecode,
    /// Minimum argmax probability over the answer tokens; 0 when the
    /// answer failed to parse.
    pub certainty: f64,
    pub trigger: ProbeTrigger,
}

/// Numerically stable softmax: max-subtraction before exponentiation, so
/// extreme logits cannot overflow. Outputs are in (0, 1], sum to 1 within
/// 1e-9, and preserve the argmax index exactly.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, Error> {
    if logits.is_empty() {
        return Err(Error::Numerical("softmax of an empty logit vector".into()));
    }
    if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::Numerical(format!("softmax input contains non-finite logit {bad}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// The min-max certainty of a forced answer: the minimum over answer-token
/// positions of each position's argmax probability. ParseFailed → 0.
pub fn answer_certainty(answer: &AnswerDecode) -> f64 {
    if answer.parsed_value.is_none() {
        return 0.0;
    }
    answer
        .digit_tokens
        .iter()
        .map(|(_, p)| *p)
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0)
}

/// Fork the context, force an answer on the probe backend, and measure its
/// certainty. The caller's context is untouched; the second return value is
/// the number of tokens the probe backend generated (probe overhead).
///
/// `question` and `generated` must be in the probe backend's token space;
/// when the probe model differs from the generator, the caller re-tokenizes
/// the context text first (the decoder does this automatically).
pub fn certainty_probe(
    question: &[Token],
    generated: &[Token],
    probe_backend: &dyn TokenBackend,
    trigger: ProbeTrigger,
    max_answer_tokens: usize,
) -> Result<(ProbeResult, u64), Error> {
    let (answer, generated_tokens) =
        force_answer_counted(question, generated, probe_backend, max_answer_tokens, None)?;
    let certainty = answer_certainty(&answer);
    Ok((
        ProbeResult { step: generated.len() as u64, answer, certainty, trigger },
        generated_tokens,
    ))
}

/// One row of a threshold calibration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Thinking tokens used when decoding stopped under this threshold.
    pub stop_step: u64,
    /// budget − stop_step.
    pub tokens_saved: u64,
    pub answer: Prediction,
    /// Only present when the caller supplied the ground truth.
    pub correct: Option<bool>,
}

/// Result of replaying one deterministic source under several thresholds.
/// On a fixed trace, stop_step is non-decreasing in the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub rows: Vec<SweepRow>,
}

impl ThresholdSweep {
    /// Serialize as CSV with the stable header
    /// `threshold,stop_step,tokens_saved,answer,correct`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), Error> {
        let mut w = csv::Writer::from_writer(out);
        let io_err = |e: csv::Error| Error::Input(format!("sweep csv write failed: {e}"));
        w.write_record(["threshold", "stop_step", "tokens_saved", "answer", "correct"])
            .map_err(io_err)?;
        for row in &self.rows {
            w.write_record([
                row.threshold.to_string(),
                row.stop_step.to_string(),
                row.tokens_saved.to_string(),
                row.answer.to_string(),
                row.correct.map(|c| c.to_string()).unwrap_or_default(),
            ])
            .map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Input(format!("sweep csv flush failed: {e}")))?;
        Ok(())
    }
}

/// Replay the same deterministic source once per threshold, decoding under
/// certainty-guided reasoning, and record where each threshold stops.
///
/// Thresholds must be sorted ascending and lie in [0, 1]; values below 0.90
/// are allowed but warned about (they tend to certify hallucinated answers).
/// Both backends must be deterministic, otherwise rows would not be
/// comparable — non-deterministic backends are rejected.
pub fn sweep_thresholds(
    gen_backend: &dyn TokenBackend,
    probe_backend: &dyn TokenBackend,
    question: &[Token],
    thresholds: &[f64],
    params: &DecodeParams,
    truth: Option<u16>,
) -> Result<ThresholdSweep, Error> {
    if !gen_backend.is_deterministic() || !probe_backend.is_deterministic() {
        return Err(Error::SweepUnsupported(
            "threshold sweeps need deterministic backends; rows from a stochastic \
             backend would not be comparable"
                .into(),
        ));
    }
    for pair in thresholds.windows(2) {
        if pair[0] > pair[1] {
            return Err(Error::Config(format!(
                "thresholds must be sorted ascending: {} precedes {}",
                pair[0], pair[1]
            )));
        }
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
    }
    for t in thresholds.iter().filter(|t| **t < 0.90) {
        log::warn!("threshold {t} is below 0.90; low thresholds certify unreliable answers");
    }

    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let per = DecodeParams { threshold, ..params.clone() };
        let pair = BackendPair::distinct_unless_same(gen_backend, probe_backend);
        let trace = decode("sweep", question, pair, DecodingMode::Cgr, &per)
            .map_err(|e| e.source)?;
        let answer = extract_answer(&trace.final_answer);
        rows.push(SweepRow {
            threshold,
            stop_step: trace.thinking_tokens_used,
            tokens_saved: params.budget - trace.thinking_tokens_used,
            answer,
            correct: truth.map(|t| answer == Prediction::Answer(t)),
        });
    }
    Ok(ThresholdSweep { rows })
}
