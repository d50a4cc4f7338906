//! Scoring and reporting: penalty-based grading with abstention policies,
//! token-savings accounting, multi-seed aggregation, and question ranking.
//!
//! Everything here is pure aggregation over immutable [`EvalRecord`]s, so
//! results are independent of how the records were produced or partitioned.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decoder::{Prediction, ReasoningTrace, StopReason};
use crate::error::Error;

/// Per-question, per-seed outcome of one decode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub seed: u64,
    /// Certainty threshold the run decoded under.
    pub threshold: f64,
    pub predicted: Prediction,
    /// Ground truth, 0..=999.
    pub truth: u16,
    /// Answered and matched the truth.
    pub correct: bool,
    /// As-recorded abstention: the run exhausted its budget without
    /// certifying, or the forced answer failed to parse.
    pub abstained: bool,
    pub thinking_tokens_used: u64,
    /// budget − thinking_tokens_used.
    pub tokens_saved: u64,
    pub final_certainty: f64,
    pub stop_reason: StopReason,
}

/// Fixed column set for records.csv / records.jsonl.
pub const RECORD_COLUMNS: [&str; 11] = [
    "question_id",
    "seed",
    "threshold",
    "predicted",
    "truth",
    "correct",
    "abstained",
    "thinking_tokens_used",
    "tokens_saved",
    "final_certainty",
    "stop_reason",
];

/// Build the eval record for one finished trace.
pub fn record_from_trace(
    trace: &ReasoningTrace,
    truth: u16,
    seed: u64,
    threshold: f64,
) -> EvalRecord {
    let predicted = crate::decoder::extract_answer(&trace.final_answer);
    let abstained = matches!(trace.stop_reason, StopReason::BudgetExhausted)
        || predicted == Prediction::Abstain;
    let correct = !abstained && predicted == Prediction::Answer(truth);
    EvalRecord {
        question_id: trace.question_id.clone(),
        seed,
        threshold,
        predicted,
        truth,
        correct,
        abstained,
        thinking_tokens_used: trace.thinking_tokens_used,
        tokens_saved: trace.budget.saturating_sub(trace.thinking_tokens_used),
        final_certainty: trace.final_certainty,
        stop_reason: trace.stop_reason,
    }
}

/// Write records as CSV with the fixed [`RECORD_COLUMNS`] header.
pub fn write_records_csv(out: impl Write, records: &[EvalRecord]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::Input(format!("records csv write failed: {e}"));
    w.write_record(RECORD_COLUMNS).map_err(io_err)?;
    for r in records {
        w.write_record([
            r.question_id.clone(),
            r.seed.to_string(),
            r.threshold.to_string(),
            r.predicted.to_string(),
            r.truth.to_string(),
            r.correct.to_string(),
            r.abstained.to_string(),
            r.thinking_tokens_used.to_string(),
            r.tokens_saved.to_string(),
            r.final_certainty.to_string(),
            r.stop_reason.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("records csv flush failed: {e}")))?;
    Ok(())
}

/// When a graded question counts as skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstentionPolicy {
    /// Every question counts as answered — the grade the model would get
    /// if it answered everything.
    Never,
    /// Trust each record's recorded abstention flag.
    AsRecorded,
    /// Skip any record whose final certainty is below the given bar — a
    /// user who only submits answers they are confident about.
    CertaintyBelow(f64),
}

impl std::fmt::Display for AbstentionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AbstentionPolicy::Never => f.write_str("never"),
            AbstentionPolicy::AsRecorded => f.write_str("as_recorded"),
            AbstentionPolicy::CertaintyBelow(t) => write!(f, "certainty_below({t})"),
        }
    }
}

impl AbstentionPolicy {
    fn abstains(&self, record: &EvalRecord) -> bool {
        match self {
            AbstentionPolicy::Never => false,
            AbstentionPolicy::AsRecorded => record.abstained,
            AbstentionPolicy::CertaintyBelow(bar) => record.final_certainty < *bar,
        }
    }
}

/// Exam-style score for one question: +1 if answered correctly, 0 if
/// skipped, −c for a confident wrong answer.
pub fn score_question(predicted: Prediction, truth: u16, abstained: bool, penalty_c: f64) -> f64 {
    if abstained {
        0.0
    } else if predicted == Prediction::Answer(truth) {
        1.0
    } else {
        -penalty_c
    }
}

/// Grade of one record set under one penalty and one abstention policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub policy: AbstentionPolicy,
    pub penalty_c: f64,
    pub total_correct: u64,
    pub total_wrong: u64,
    pub total_abstained: u64,
    /// total_correct − penalty_c × total_wrong.
    pub grade: f64,
}

/// Grade one seed's records: apply the abstention policy, then sum the
/// per-question scores. Records must cover distinct question ids.
pub fn grade_dataset(
    records: &[EvalRecord],
    penalty_c: f64,
    policy: AbstentionPolicy,
) -> Result<GradeReport, Error> {
    if !(penalty_c >= 0.0) || !penalty_c.is_finite() {
        return Err(Error::Input(format!("penalty must be a finite value ≥ 0, got {penalty_c}")));
    }
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.question_id.as_str()) {
            return Err(Error::Input(format!(
                "duplicate question id {:?}; grade one seed's records at a time",
                r.question_id
            )));
        }
    }

    let mut total_correct = 0u64;
    let mut total_wrong = 0u64;
    let mut total_abstained = 0u64;
    for r in records {
        if policy.abstains(r) {
            total_abstained += 1;
        } else if r.predicted == Prediction::Answer(r.truth) {
            total_correct += 1;
        } else {
            total_wrong += 1;
        }
    }
    let grade = total_correct as f64 - penalty_c * total_wrong as f64;
    Ok(GradeReport { policy, penalty_c, total_correct, total_wrong, total_abstained, grade })
}

/// One savings-table row: all records at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsSummary {
    pub threshold: f64,
    pub seed_count: u64,
    pub question_count: u64,
    /// Σ tokens_saved over every (question, seed) record.
    pub total_saved: u64,
    /// total_saved / seed_count, floored.
    pub avg_per_seed: u64,
    /// total_saved / (seed_count × question_count), floored.
    pub avg_per_question: u64,
}

/// Aggregate token savings, one row per threshold (ascending). All records
/// must share one budget (tokens_saved + thinking_tokens_used); averages
/// use floor division, as documented in the report schema.
pub fn tokens_saved_summary(records: &[EvalRecord]) -> Result<Vec<SavingsSummary>, Error> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let budget_of = |r: &EvalRecord| r.tokens_saved + r.thinking_tokens_used;
    let budget = budget_of(&records[0]);
    if let Some(odd) = records.iter().find(|r| budget_of(r) != budget) {
        return Err(Error::Input(format!(
            "mixed budgets in savings input: {} implies budget {}, expected {budget}; \
             summarize one budget at a time",
            odd.question_id,
            budget_of(odd)
        )));
    }

    // Group by threshold bit pattern; thresholds originate from one config
    // list, so equal values are bit-identical.
    let mut groups: BTreeMap<u64, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.threshold.to_bits()).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for group in groups.values() {
        let threshold = group[0].threshold;
        let mut seeds = HashSet::new();
        let mut questions = HashSet::new();
        let mut pairs = HashSet::new();
        let mut total_saved = 0u64;
        for r in group {
            seeds.insert(r.seed);
            questions.insert(r.question_id.as_str());
            if !pairs.insert((r.question_id.as_str(), r.seed)) {
                return Err(Error::Input(format!(
                    "duplicate record for question {:?} seed {} at threshold {threshold}",
                    r.question_id, r.seed
                )));
            }
            total_saved += r.tokens_saved;
        }
        let seed_count = seeds.len() as u64;
        let question_count = questions.len() as u64;
        rows.push(SavingsSummary {
            threshold,
            seed_count,
            question_count,
            total_saved,
            avg_per_seed: total_saved / seed_count,
            avg_per_question: total_saved / (seed_count * question_count),
        });
    }
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    Ok(rows)
}

/// Render a savings table as aligned text with thousands separators:
///
/// ```text
/// Threshold  Total Tokens Saved  Avg. per Seed  Avg. per Question
/// 0.99       2,042,389           31,912         1,063
/// ```
pub fn format_savings_table(rows: &[SavingsSummary]) -> String {
    let mut out = String::new();
    out.push_str("Threshold  Total Tokens Saved  Avg. per Seed  Avg. per Question\n");
    for row in rows {
        let cells = [
            format!("{}", row.threshold),
            group_thousands(row.total_saved),
            group_thousands(row.avg_per_seed),
            group_thousands(row.avg_per_question),
        ];
        // Column widths follow the header; the last cell is unpadded.
        out.push_str(&format!(
            "{:<9}  {:<18}  {:<13}  {}\n",
            cells[0], cells[1], cells[2], cells[3]
        ));
    }
    out
}

/// Parse a table produced by [`format_savings_table`] back into
/// (threshold, total, per-seed, per-question) rows.
pub fn parse_savings_table(text: &str) -> Result<Vec<(f64, u64, u64, u64)>, Error> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("Threshold") {
        return Err(Error::Input(format!("not a savings table: first line {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Input(format!(
                "savings table row {} has {} fields, expected 4",
                i + 2,
                fields.len()
            )));
        }
        let threshold: f64 = fields[0]
            .parse()
            .map_err(|e| Error::Input(format!("bad threshold {:?}: {e}", fields[0])))?;
        let num = |s: &str| -> Result<u64, Error> {
            s.replace(',', "")
                .parse()
                .map_err(|e| Error::Input(format!("bad count {s:?}: {e}")))
        };
        rows.push((threshold, num(fields[1])?, num(fields[2])?, num(fields[3])?));
    }
    Ok(rows)
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    let lead = digits.len() % 3;
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (i + 3 - lead) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Stability of a multi-seed run: mean and sample standard deviation of
/// per-seed correct counts, prefix means in seed order, and mean grade per
/// penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    /// Number of seeds aggregated.
    pub seeds: u64,
    pub mean_correct: f64,
    /// Sample standard deviation (n − 1 denominator; 0 when n = 1).
    pub std_correct: f64,
    /// cumulative_means[i] = mean of the first i+1 seeds' counts; the last
    /// entry equals mean_correct.
    pub cumulative_means: Vec<f64>,
    /// (penalty, mean grade across seeds), ascending by penalty.
    pub mean_grade_per_penalty: Vec<(f64, f64)>,
}

/// Aggregate per-seed correct counts and per-seed grades. `grades` maps
/// each penalty to that penalty's per-seed grade sequence, which must be
/// the same length as `correct_counts`.
pub fn aggregate_seeds(
    correct_counts: &[u64],
    grades: &[(f64, Vec<f64>)],
) -> Result<SeedAggregate, Error> {
    if correct_counts.is_empty() {
        return Err(Error::Input("seed aggregation needs at least one seed".into()));
    }
    let n = correct_counts.len();
    for (penalty, series) in grades {
        if series.len() != n {
            return Err(Error::Input(format!(
                "penalty {penalty} has {} per-seed grades for {n} seeds",
                series.len()
            )));
        }
    }

    let values: Vec<f64> = correct_counts.iter().map(|c| *c as f64).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    let mut cumulative = Vec::with_capacity(n);
    let mut running = 0.0;
    for (i, v) in values.iter().enumerate() {
        running += v;
        cumulative.push(running / (i + 1) as f64);
    }

    let mut mean_grades: Vec<(f64, f64)> = grades
        .iter()
        .map(|(penalty, series)| (*penalty, series.iter().sum::<f64>() / n as f64))
        .collect();
    mean_grades.sort_by(|a, b| a.0.total_cmp(&b.0));

    Ok(SeedAggregate {
        seeds: n as u64,
        mean_correct: mean,
        std_correct: std,
        cumulative_means: cumulative,
        mean_grade_per_penalty: mean_grades,
    })
}

/// Order questions by mean tokens saved across their records, descending;
/// ties break by ascending question id. Highest savings first — the
/// cheapest-to-certify questions, a proxy for the easiest ones.
pub fn rank_questions(records: &[EvalRecord]) -> Vec<(String, f64)> {
    let mut sums: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in records {
        let entry = sums.entry(r.question_id.as_str()).or_insert((0, 0));
        entry.0 += r.tokens_saved;
        entry.1 += 1;
    }
    let mut ranked: Vec<(String, f64)> = sums
        .into_iter()
        .map(|(id, (sum, n))| (id.to_string(), sum as f64 / n as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}
