//! Scripted trace replay backend.
//!
//! A trace file is line-delimited JSON: a header line carrying the
//! vocabulary and special tokens, then one record per step:
//!
//! ```text
//! {"vocab": [{"id": 0, "text": "<eos>"}, ...], "specials": {...}}
//! {"step": 0, "candidates": [{"id": 17, "text": "2", "p": 0.9}, ...]}
//! {"step": 1, "candidates": [...]}
//! ```
//!
//! Replay is keyed purely by the generation step (`generated.len()`): the
//! recorded distribution for that step is returned, truncated to the
//! requested top-k. Querying past the end of the trace yields the
//! end-of-sequence token with probability 1, so controllers terminate
//! cleanly on short traces instead of erroring.
//!
//! Candidates are re-sorted on load (descending probability, ascending id on
//! ties); out-of-range probabilities, gaps in step numbering, unknown token
//! ids, and text/vocabulary mismatches are format errors naming the line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{SpecialTokens, Token, TokenBackend, TokenDistribution, Vocabulary};
use crate::error::Error;

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    vocab: Vec<Token>,
    specials: SpecialTokens,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRecord {
    step: u64,
    candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRecord {
    id: u32,
    text: String,
    p: f64,
}

/// Deterministic replay of one recorded generation.
#[derive(Debug)]
pub struct TraceBackend {
    steps: Vec<Vec<(Token, f64)>>,
    vocab: Vocabulary,
    specials: SpecialTokens,
}

/// Load a trace file into a replay backend. See the module docs for the
/// format; all validation failures carry the 1-based line number.
pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceBackend, Error> {
    TraceBackend::load(path)
}

impl TraceBackend {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();

        let bad = |line: usize, message: String| Error::TraceFormat { line, message };

        let (_, header_line) = lines
            .next()
            .ok_or_else(|| bad(1, "file is empty, expected a header line".into()))?;
        let header_line = header_line.map_err(|e| Error::io(path, e))?;
        let header: TraceHeader = serde_json::from_str(&header_line)
            .map_err(|e| bad(1, format!("header is not valid JSON: {e}")))?;
        let vocab =
            Vocabulary::new(header.vocab.into_iter().map(|t| (t.id, t.text))).map_err(|e| {
                bad(1, format!("header vocabulary is malformed: {e}"))
            })?;
        let specials = header.specials;
        specials.validate().map_err(|e| bad(1, format!("header specials invalid: {e}")))?;
        for (what, tok) in
            [("end_think", &specials.end_think), ("end_of_sequence", &specials.end_of_sequence)]
        {
            match vocab.token(tok.id) {
                Some(v) if v.text == tok.text => {}
                Some(v) => {
                    return Err(bad(
                        1,
                        format!(
                            "{what} token {} has text {:?} but the vocabulary says {:?}",
                            tok.id, tok.text, v.text
                        ),
                    ))
                }
                None => {
                    return Err(bad(1, format!("{what} token {} is not in the vocabulary", tok.id)))
                }
            }
        }

        let mut steps: Vec<Vec<(Token, f64)>> = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1; // enumerate is 0-based
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: StepRecord = serde_json::from_str(&line)
                .map_err(|e| bad(line_no, format!("step record is not valid JSON: {e}")))?;
            if record.step != steps.len() as u64 {
                return Err(bad(
                    line_no,
                    format!("expected step {}, found step {}", steps.len(), record.step),
                ));
            }
            if record.candidates.is_empty() {
                return Err(bad(line_no, "candidate list is empty".into()));
            }
            let mut cands = Vec::with_capacity(record.candidates.len());
            for c in record.candidates {
                if !c.p.is_finite() || !(0.0..=1.0).contains(&c.p) {
                    return Err(bad(
                        line_no,
                        format!("probability {} for token {} outside [0,1]", c.p, c.id),
                    ));
                }
                match vocab.token(c.id) {
                    Some(v) if v.text == c.text => cands.push((v, c.p)),
                    Some(v) => {
                        return Err(bad(
                            line_no,
                            format!(
                                "token {} text {:?} disagrees with the vocabulary ({:?})",
                                c.id, c.text, v.text
                            ),
                        ))
                    }
                    None => {
                        return Err(bad(
                            line_no,
                            format!("token id {} is not in the vocabulary", c.id),
                        ))
                    }
                }
            }
            cands.sort_by(|(a, pa), (b, pb)| {
                pb.partial_cmp(pa).expect("probabilities validated finite").then(a.id.cmp(&b.id))
            });
            TokenDistribution::try_new(cands.clone(), record.step)
                .map_err(|m| bad(line_no, m))?;
            steps.push(cands);
        }

        Ok(TraceBackend { steps, vocab, specials })
    }

    /// Number of recorded steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl TokenBackend for TraceBackend {
    fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, Error> {
        self.vocab.tokenize(text)
    }

    fn next_distribution(
        &self,
        _question: &[Token],
        generated: &[Token],
        top_k: usize,
    ) -> Result<TokenDistribution, Error> {
        if top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        let step = generated.len();
        if step < self.steps.len() {
            let take = top_k.min(self.steps[step].len());
            TokenDistribution::try_new(self.steps[step][..take].to_vec(), step as u64)
                .map_err(Error::Numerical)
        } else {
            // Past the recorded end: a forced end-of-sequence.
            TokenDistribution::try_new(
                vec![(self.specials.end_of_sequence.clone(), 1.0)],
                step as u64,
            )
            .map_err(Error::Numerical)
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Write a trace file in the format [`TraceBackend::load`] reads.
pub fn save_trace(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    specials: &SpecialTokens,
    steps: &[Vec<(Token, f64)>],
) -> Result<(), Error> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let header = TraceHeader { vocab: vocab.entries(), specials: specials.clone() };
    let mut body = serde_json::to_string(&header).expect("header serializes");
    body.push('\n');
    for (step, cands) in steps.iter().enumerate() {
        let record = StepRecord {
            step: step as u64,
            candidates: cands
                .iter()
                .map(|(t, p)| CandidateRecord { id: t.id, text: t.text.clone(), p: *p })
                .collect(),
        };
        body.push_str(&serde_json::to_string(&record).expect("step serializes"));
        body.push('\n');
    }
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
