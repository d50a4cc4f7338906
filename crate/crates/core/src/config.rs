//! Run configuration: defaults, validation, the flat key-value config
//! file, and the list grammars shared by flags and file values.
//!
//! Precedence is resolved by the CLI: command-line flags override config
//! file values, which override the defaults here. The file uses the same
//! names as the flags, and every value uses the same grammar as the
//! corresponding flag, so both layers share one parser.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;
use crate::decoder::{DecodeParams, DecodingMode};
use crate::error::Error;

/// Environment variable consulted as a last-resort backend address: when
/// neither flag nor file names a backend, its value is used as
/// `remote:<url>`.
pub const BACKEND_URL_ENV: &str = "CGR_BACKEND_URL";

/// Fully resolved configuration for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: DecodingMode,
    /// Thinking-token budget B.
    pub budget: u64,
    /// Certainty threshold θ.
    pub threshold: f64,
    /// Probe spacing I.
    pub probe_interval: u64,
    pub seeds: Vec<u64>,
    /// Penalty coefficients c to grade under.
    pub penalties: Vec<f64>,
    pub backend: BackendSpec,
    /// Separate probe model; `None` reuses `backend`.
    pub probe_backend: Option<BackendSpec>,
    pub system_prompt: String,
    /// Format string assembling the full prompt; `{system}` and
    /// `{question}` are substituted.
    pub prompt_template: String,
    /// Cap on tokens decoded during forced answer extraction.
    pub max_answer_tokens: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: DecodingMode::Cgr,
            budget: 32_000,
            threshold: 0.97,
            probe_interval: 1_000,
            seeds: vec![42],
            penalties: vec![0.0, 0.25, 0.5, 1.0],
            backend: BackendSpec::Mock {
                profile: crate::backend::MockProfile::default(),
                max_context: None,
            },
            probe_backend: None,
            system_prompt: "You are a helpful assistant".to_string(),
            prompt_template: "{system}\n{question}".to_string(),
            max_answer_tokens: 4,
        }
    }
}

impl RunConfig {
    /// Check invariants. Hard violations return a config error; soft ones
    /// (a threshold under 0.90, which tends to certify unreliable answers)
    /// are returned as warnings and also logged.
    pub fn validate(&self) -> Result<Vec<String>, Error> {
        if self.probe_interval < 1 {
            return Err(Error::Config("probe interval must be at least 1".into()));
        }
        if self.budget < self.probe_interval {
            return Err(Error::Config(format!(
                "budget {} is smaller than the probe interval {}",
                self.budget, self.probe_interval
            )));
        }
        if !self.threshold.is_finite() || !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("duplicate seed {dup}")));
        }
        if self.penalties.is_empty() {
            return Err(Error::Config("at least one penalty is required".into()));
        }
        for c in &self.penalties {
            if !c.is_finite() || *c < 0.0 {
                return Err(Error::Config(format!("penalty {c} must be finite and ≥ 0")));
            }
        }
        let mut bits = std::collections::HashSet::new();
        if let Some(dup) = self.penalties.iter().find(|c| !bits.insert(c.to_bits())) {
            return Err(Error::Config(format!("duplicate penalty {dup}")));
        }
        if self.max_answer_tokens < 1 {
            return Err(Error::Config("max_answer_tokens must be at least 1".into()));
        }
        if !self.prompt_template.contains("{question}") {
            return Err(Error::Config(
                "prompt_template must contain the {question} placeholder".into(),
            ));
        }

        let mut warnings = Vec::new();
        if self.threshold < 0.90 {
            let warning = format!(
                "threshold {} is below 0.90; low thresholds certify unreliable answers",
                self.threshold
            );
            log::warn!("{warning}");
            warnings.push(warning);
        }
        Ok(warnings)
    }

    /// Assemble the prompt fed to the backend for one question.
    pub fn render_prompt(&self, question_text: &str) -> String {
        self.prompt_template
            .replace("{system}", &self.system_prompt)
            .replace("{question}", question_text)
    }

    /// The decode knobs this config implies.
    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            budget: self.budget,
            threshold: self.threshold,
            probe_interval: self.probe_interval,
            max_answer_tokens: self.max_answer_tokens,
        }
    }

    /// Overwrite fields present in a config file; values use the flag
    /// grammars and are parsed here so flags and file cannot drift.
    pub fn apply_file(&mut self, file: &FileConfig) -> Result<(), Error> {
        if let Some(mode) = &file.mode {
            self.mode = mode.parse()?;
        }
        if let Some(budget) = file.budget {
            self.budget = budget;
        }
        if let Some(threshold) = file.threshold {
            self.threshold = threshold;
        }
        if let Some(interval) = file.interval {
            self.probe_interval = interval;
        }
        if let Some(seeds) = &file.seeds {
            self.seeds = parse_seed_list(seeds)?;
        }
        if let Some(penalties) = &file.penalties {
            self.penalties = parse_f64_list(penalties)?;
        }
        if let Some(backend) = &file.backend {
            self.backend = backend.parse()?;
        }
        if let Some(probe) = &file.probe_backend {
            self.probe_backend = Some(probe.parse()?);
        }
        if let Some(system) = &file.system_prompt {
            self.system_prompt = system.clone();
        }
        if let Some(template) = &file.prompt_template {
            self.prompt_template = template.clone();
        }
        if let Some(max) = file.max_answer_tokens {
            self.max_answer_tokens = max;
        }
        Ok(())
    }
}

/// The config file: flat key-value TOML whose keys mirror the flags.
/// String-valued entries reuse the flag grammars verbatim. `dataset`,
/// `out`, `thresholds`, and `budgets` are surfaced to the CLI rather than
/// resolved into [`RunConfig`].
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub budget: Option<u64>,
    pub threshold: Option<f64>,
    pub interval: Option<u64>,
    /// Seed list, e.g. "42,43" or "0..64".
    pub seeds: Option<String>,
    /// Penalty list, e.g. "0,0.25,0.5,1.0".
    pub penalties: Option<String>,
    pub backend: Option<String>,
    pub probe_backend: Option<String>,
    pub system_prompt: Option<String>,
    pub prompt_template: Option<String>,
    pub max_answer_tokens: Option<usize>,
    pub dataset: Option<String>,
    pub out: Option<String>,
    /// Sweep axis: threshold list, e.g. "0.96,0.97,0.98,0.99".
    pub thresholds: Option<String>,
    /// Sweep axis: budget list, e.g. "1000,2000,4000".
    pub budgets: Option<String>,
}

/// Parse a TOML config file, rejecting unknown keys so typos fail loudly.
pub fn load_file_config(path: impl AsRef<Path>) -> Result<FileConfig, Error> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
}

/// Seed list grammar: comma-separated atoms, each a number or an exclusive
/// range `a..b` (e.g. "0..64" is seeds 0 through 63).
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, Error> {
    const MAX_RANGE: u64 = 1_000_000;
    let mut seeds = Vec::new();
    for atom in text.split(',') {
        let atom = atom.trim();
        if atom.is_empty() {
            return Err(Error::Config(format!("empty entry in seed list {text:?}")));
        }
        if let Some((lo, hi)) = atom.split_once("..") {
            let lo: u64 = lo
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad seed range start {lo:?}: {e}")))?;
            let hi: u64 = hi
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("bad seed range end {hi:?}: {e}")))?;
            if hi <= lo {
                return Err(Error::Config(format!(
                    "seed range {atom:?} is empty (end is exclusive)"
                )));
            }
            if hi - lo > MAX_RANGE {
                return Err(Error::Config(format!(
                    "seed range {atom:?} spans more than {MAX_RANGE} seeds"
                )));
            }
            seeds.extend(lo..hi);
        } else {
            seeds.push(
                atom.parse()
                    .map_err(|e| Error::Config(format!("bad seed {atom:?}: {e}")))?,
            );
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

/// Comma-separated list of reals (penalties, thresholds).
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|atom| {
            let atom = atom.trim();
            atom.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad value {atom:?} in list {text:?}: {e}")))
        })
        .collect()
}

/// Comma-separated list of integers (budgets).
pub fn parse_u64_list(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(|atom| {
            let atom = atom.trim();
            atom.parse::<u64>()
                .map_err(|e| Error::Config(format!("bad value {atom:?} in list {text:?}: {e}")))
        })
        .collect()
}
