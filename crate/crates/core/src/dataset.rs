//! Question datasets: JSON-lines files of id / question / integer answer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One evaluation question with its ground-truth integer answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    /// Unique, non-empty identifier; also the trace file stem.
    pub id: String,
    /// Non-empty question text fed to the backend.
    pub question: String,
    /// Ground truth in 0..=999.
    pub answer: u16,
}

/// Maximum ground-truth value a dataset may carry.
pub const MAX_ANSWER: u16 = 999;

/// Load a JSON-lines dataset: one `{"id", "question", "answer"}` object per
/// line, blank lines ignored. Every malformed line is reported with its
/// 1-based line number; ids must be unique and non-empty, question text
/// non-empty, and answers within 0..=999.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>, Error> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut records: Vec<QuestionRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: line_no,
            message: format!("malformed question record: {e}"),
        })?;
        let record = record.validate(line_no)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Dataset {
                line: line_no,
                message: format!("duplicate question id {:?}", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Write a dataset in the format `load_dataset` reads. Validates the same
/// constraints so a saved file always loads.
pub fn save_dataset(path: impl AsRef<Path>, records: &[QuestionRecord]) -> Result<(), Error> {
    let path = path.as_ref();
    let mut seen = std::collections::HashSet::new();
    for (i, r) in records.iter().enumerate() {
        let raw = RawRecord {
            id: r.id.clone(),
            question: r.question.clone(),
            answer: i64::from(r.answer),
        };
        raw.validate(i + 1)?;
        if !seen.insert(&r.id) {
            return Err(Error::Dataset {
                line: i + 1,
                message: format!("duplicate question id {:?}", r.id),
            });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Wire shape with a wide answer type, so out-of-range answers produce a
/// range error mentioning the value instead of a serde integer failure.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    question: String,
    answer: i64,
}

impl RawRecord {
    fn validate(self, line: usize) -> Result<QuestionRecord, Error> {
        if self.id.trim().is_empty() {
            return Err(Error::Dataset { line, message: "empty question id".into() });
        }
        if self.question.trim().is_empty() {
            return Err(Error::Dataset {
                line,
                message: format!("question {:?} has empty text", self.id),
            });
        }
        if !(0..=i64::from(MAX_ANSWER)).contains(&self.answer) {
            return Err(Error::Dataset {
                line,
                message: format!(
                    "question {:?} has answer {} outside 0..={MAX_ANSWER}",
                    self.id, self.answer
                ),
            });
        }
        Ok(QuestionRecord { id: self.id, question: self.question, answer: self.answer as u16 })
    }
}
