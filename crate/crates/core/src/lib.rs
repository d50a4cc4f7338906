//! Certainty-guided reasoning engine: token-level inference control for
//! reasoning language models, plus the evaluation harness around it.
//!
//! A reasoning model thinks in a token stream before answering. This crate
//! decides, token by token, whether the model keeps thinking, is forced to
//! continue past a premature stop, or exits early because a **certainty
//! probe** shows it already knows its answer. The probe forks the current
//! context, forces the answer out, and measures the minimum argmax
//! probability over the answer tokens; when that certainty clears a
//! threshold θ, further thinking is unlikely to change the answer and the
//! tokens it would burn are saved.
//!
//! The pieces:
//!
//! - [`backend`] — the [`backend::TokenBackend`] abstraction (next-token
//!   distributions over a question + generated context) with three
//!   implementations: a seeded deterministic mock, a recorded-trace
//!   replayer, and a remote HTTP client.
//! - [`decoder`] — the four control loops ([`decoder::DecodingMode`]):
//!   plain decoding, budget forcing, certainty-guided early exit, and
//!   their combination; plus forced answer extraction.
//! - [`certainty`] — min-max answer certainty, probes, and threshold
//!   calibration sweeps.
//! - [`eval`] — penalty-based grading with abstention policies, token
//!   savings, multi-seed aggregation, question ranking.
//! - [`config`] / [`runner`] — run configuration and the experiment
//!   orchestrator that writes self-contained, reproducible run
//!   directories.
//!
//! The `cgr` binary exposes all of it on the command line.

pub mod backend;
pub mod certainty;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod runner;

pub use backend::{BackendSpec, SpecialTokens, Token, TokenBackend, TokenDistribution};
pub use certainty::{answer_certainty, certainty_probe, softmax, ProbeResult, ProbeTrigger};
pub use config::RunConfig;
pub use dataset::{load_dataset, QuestionRecord};
pub use decoder::{
    decode, extract_answer, force_answer, AnswerDecode, BackendPair, DecodeError, DecodeParams,
    DecodingMode, Prediction, ReasoningTrace, StopReason,
};
pub use error::Error;
pub use eval::{
    aggregate_seeds, grade_dataset, rank_questions, record_from_trace, score_question,
    tokens_saved_summary, AbstentionPolicy, EvalRecord, GradeReport, SeedAggregate,
};
pub use runner::{emit_plot_data, regenerate_reports, run_experiment, run_matrix, ENGINE_VERSION};
