//! Experiment orchestration: fan independent (seed × question × threshold ×
//! budget) decodes out to a worker pool, write traces and summary reports
//! atomically, and rebuild reports or plot series from a finished run
//! directory.
//!
//! A run directory is self-contained: `manifest.json` carries the resolved
//! config, the dataset digest and ground truths, and a digest of every
//! other output file, so `report` and `plotdata` never need the original
//! dataset file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::TokenBackend;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, QuestionRecord};
use crate::decoder::{decode, BackendPair, DecodeParams, ReasoningTrace};
use crate::error::Error;
use crate::eval::{
    aggregate_seeds, grade_dataset, rank_questions, record_from_trace, tokens_saved_summary,
    write_records_csv, AbstentionPolicy, EvalRecord, SeedAggregate,
};

/// Engine version stamped into every manifest.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One stored trace file: the trace plus the run coordinates that produced
/// it, so a run directory can be re-graded without the original config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEnvelope {
    pub mode: crate::decoder::DecodingMode,
    pub seed: u64,
    pub threshold: f64,
    pub trace: ReasoningTrace,
}

/// A job that failed mid-run; recorded in the manifest, never fatal to the
/// rest of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub question_id: String,
    pub seed: u64,
    pub threshold: f64,
    pub budget: u64,
    pub error: String,
    /// Thinking tokens decoded before the failure.
    pub thinking_tokens_at_failure: u64,
}

/// Digest entry for one output file, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Dataset identity carried in the manifest: where it came from, what it
/// hashed to, and the ground truths needed to re-grade traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: String,
    pub sha256: String,
    /// question id → ground-truth answer.
    pub truths: BTreeMap<String, u16>,
}

/// The run directory's index: configuration, provenance, and a digest of
/// every output file (itself excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine_version: String,
    /// Wall-clock creation time; the only field that differs between
    /// identical reruns.
    pub created_unix_seconds: u64,
    pub config: RunConfig,
    /// SHA-256 of the resolved config's canonical JSON.
    pub config_sha256: String,
    pub dataset: DatasetManifest,
    /// Threshold axis actually run (a plain run has one entry).
    pub thresholds: Vec<f64>,
    /// Budget axis actually run.
    pub budgets: Vec<u64>,
    pub files: Vec<FileDigest>,
    pub failures: Vec<FailureNote>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const GRADES_CSV: &str = "grades.csv";
pub const SAVINGS_CSV: &str = "savings.csv";
pub const SAVINGS_TABLE: &str = "savings_table.txt";
pub const SEED_AGGREGATE_JSON: &str = "seed_aggregate.json";
pub const SEED_AGGREGATE_CSV: &str = "seed_aggregate.csv";
pub const RANKING_CSV: &str = "ranking.csv";

/// What a run produced, for CLI reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub record_count: usize,
    pub failure_count: usize,
}

/// Run the configured experiment over a dataset: single threshold, single
/// budget. See [`run_matrix`] for the sweep form this delegates to.
pub fn run_experiment(
    config: &RunConfig,
    dataset_path: &Path,
    out_dir: &Path,
) -> Result<RunSummary, Error> {
    run_matrix(config, &[config.threshold], &[config.budget], dataset_path, out_dir)
}

/// Run the full (threshold × budget × seed × question) matrix and write a
/// self-contained run directory. Configuration problems and an unreachable
/// backend fail before anything is written; individual decode failures are
/// recorded in the manifest while the rest of the matrix completes.
pub fn run_matrix(
    config: &RunConfig,
    thresholds: &[f64],
    budgets: &[u64],
    dataset_path: &Path,
    out_dir: &Path,
) -> Result<RunSummary, Error> {
    config.validate()?;
    if thresholds.is_empty() {
        return Err(Error::Config("threshold axis is empty".into()));
    }
    if budgets.is_empty() {
        return Err(Error::Config("budget axis is empty".into()));
    }
    // Every combo must satisfy the same invariants as a single run.
    for &threshold in thresholds {
        for &budget in budgets {
            let combo = RunConfig { threshold, budget, ..config.clone() };
            combo.validate().map_err(|e| {
                Error::Config(format!("sweep point θ={threshold} B={budget}: {e}"))
            })?;
        }
    }

    let dataset_bytes =
        std::fs::read(dataset_path).map_err(|e| Error::io(dataset_path, e))?;
    let questions = load_dataset(dataset_path)?;

    // Fail fast on unreachable backends before creating the run directory.
    let gen_backends = instantiate_per_seed(&config.backend, &config.seeds)?;
    let probe_backends = match &config.probe_backend {
        Some(spec) => Some(instantiate_per_seed(spec, &config.seeds)?),
        None => None,
    };

    // Deterministic job order: threshold, budget, seed, question.
    struct Job<'a> {
        threshold: f64,
        budget: u64,
        seed: u64,
        question: &'a QuestionRecord,
    }
    let mut jobs = Vec::new();
    for &threshold in thresholds {
        for &budget in budgets {
            for &seed in &config.seeds {
                for question in &questions {
                    jobs.push(Job { threshold, budget, seed, question });
                }
            }
        }
    }

    let outcomes: Vec<Result<(TraceEnvelope, EvalRecord), FailureNote>> = jobs
        .par_iter()
        .map(|job| {
            let gen = &gen_backends[&job.seed];
            let probe = probe_backends.as_ref().map_or(gen, |m| &m[&job.seed]);
            let pair = BackendPair {
                gen: gen.as_ref(),
                probe: probe.as_ref(),
                same: Arc::ptr_eq(gen, probe),
            };
            let params = DecodeParams {
                budget: job.budget,
                threshold: job.threshold,
                probe_interval: config.probe_interval,
                max_answer_tokens: config.max_answer_tokens,
            };
            let prompt = config.render_prompt(&job.question.question);
            let question_tokens = match gen.tokenize(&prompt) {
                Ok(toks) => toks,
                Err(e) => {
                    return Err(FailureNote {
                        question_id: job.question.id.clone(),
                        seed: job.seed,
                        threshold: job.threshold,
                        budget: job.budget,
                        error: e.to_string(),
                        thinking_tokens_at_failure: 0,
                    })
                }
            };
            match decode(&job.question.id, &question_tokens, pair, config.mode, &params) {
                Ok(trace) => {
                    let record =
                        record_from_trace(&trace, job.question.answer, job.seed, job.threshold);
                    Ok((
                        TraceEnvelope {
                            mode: config.mode,
                            seed: job.seed,
                            threshold: job.threshold,
                            trace,
                        },
                        record,
                    ))
                }
                Err(e) => Err(FailureNote {
                    question_id: job.question.id.clone(),
                    seed: job.seed,
                    threshold: job.threshold,
                    budget: job.budget,
                    error: e.source.to_string(),
                    thinking_tokens_at_failure: e.partial.thinking_tokens_used,
                }),
            }
        })
        .collect();

    let mut writer = OutputTracker::new(out_dir);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((envelope, record)) => {
                let rel = trace_rel_path(&envelope);
                let bytes = to_json_pretty(&envelope)?;
                writer.write(&rel, &bytes)?;
                records.push(record);
            }
            Err(note) => {
                log::warn!(
                    "decode failed for {} (seed {}, θ {}, B {}): {}",
                    note.question_id,
                    note.seed,
                    note.threshold,
                    note.budget,
                    note.error
                );
                failures.push(note);
            }
        }
    }

    sort_records(&mut records);
    write_reports(&mut writer, &records, config)?;

    let truths: BTreeMap<String, u16> =
        questions.iter().map(|q| (q.id.clone(), q.answer)).collect();
    let manifest = Manifest {
        engine_version: ENGINE_VERSION.to_string(),
        created_unix_seconds: unix_now(),
        config: config.clone(),
        config_sha256: sha256_hex(&to_json_compact(config)?),
        dataset: DatasetManifest {
            path: dataset_path.display().to_string(),
            sha256: sha256_hex(&dataset_bytes),
            truths,
        },
        thresholds: thresholds.to_vec(),
        budgets: budgets.to_vec(),
        files: writer.digests(),
        failures,
    };
    let manifest_bytes = to_json_pretty(&manifest)?;
    writer.write_untracked(MANIFEST_FILE, &manifest_bytes)?;

    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        record_count: records.len(),
        failure_count: manifest.failures.len(),
    })
}

/// Rebuild every summary report from the traces and manifest in a run
/// directory, and refresh the manifest's file digests. Useful after
/// hand-pruning traces or to regenerate reports with a newer engine.
pub fn regenerate_reports(run_dir: &Path) -> Result<RunSummary, Error> {
    let mut manifest = read_manifest(run_dir)?;
    let envelopes = read_traces(run_dir)?;

    let mut records = Vec::with_capacity(envelopes.len());
    for envelope in &envelopes {
        let truth = *manifest.dataset.truths.get(&envelope.trace.question_id).ok_or_else(|| {
            Error::Input(format!(
                "trace {} has no ground truth in the manifest",
                envelope.trace.question_id
            ))
        })?;
        records.push(record_from_trace(&envelope.trace, truth, envelope.seed, envelope.threshold));
    }
    // Deterministic order regardless of directory walk order.
    sort_records(&mut records);

    let mut writer = OutputTracker::new(run_dir);
    // Keep the existing trace digests; only reports are rewritten.
    for file in &manifest.files {
        if file.path.starts_with("traces/") {
            writer.track(file.path.clone(), file.sha256.clone());
        }
    }
    write_reports(&mut writer, &records, &manifest.config)?;

    manifest.files = writer.digests();
    manifest.created_unix_seconds = unix_now();
    manifest.engine_version = ENGINE_VERSION.to_string();
    let manifest_bytes = to_json_pretty(&manifest)?;
    writer.write_untracked(MANIFEST_FILE, &manifest_bytes)?;

    Ok(RunSummary {
        out_dir: run_dir.to_path_buf(),
        record_count: records.len(),
        failure_count: manifest.failures.len(),
    })
}

pub const PLOTS_DIR: &str = "plots";
pub const ACCURACY_VS_BUDGET_CSV: &str = "plots/accuracy_vs_budget.csv";
pub const CUMULATIVE_MEAN_CSV: &str = "plots/cumulative_mean_vs_seed.csv";
pub const GRADE_VS_TOKENS_CSV: &str = "plots/grade_vs_tokens.csv";
pub const SAVINGS_PER_QUESTION_CSV: &str = "plots/savings_per_question.csv";

/// Emit the four plot-data series from a finished run directory into
/// `plots/`, and list them in the manifest. Data only — no rendering.
pub fn emit_plot_data(run_dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut manifest = read_manifest(run_dir)?;
    let records = read_records_jsonl(run_dir)?;
    let mode = manifest.config.mode;

    // Group records by (threshold, budget); budget is recoverable from
    // each record since tokens_saved counts against it.
    let mut groups: BTreeMap<(u64, u64), Vec<&EvalRecord>> = BTreeMap::new();
    for r in &records {
        let budget = r.tokens_saved + r.thinking_tokens_used;
        groups.entry((budget, r.threshold.to_bits())).or_default().push(r);
    }

    let mut writer = OutputTracker::new(run_dir);
    for file in &manifest.files {
        if !file.path.starts_with("plots/") {
            writer.track(file.path.clone(), file.sha256.clone());
        }
    }

    // accuracy_vs_budget.csv: one row per (mode, budget, threshold).
    let mut accuracy = String::from("mode,budget,threshold,seed_count,mean_correct,std_correct\n");
    for ((budget, threshold_bits), group) in &groups {
        let threshold = f64::from_bits(*threshold_bits);
        let agg = seed_aggregate_of(group, &[])?;
        accuracy.push_str(&format!(
            "{mode},{budget},{threshold},{},{},{}\n",
            agg.seeds, agg.mean_correct, agg.std_correct
        ));
    }
    writer.write(ACCURACY_VS_BUDGET_CSV, accuracy.as_bytes())?;

    // cumulative_mean_vs_seed.csv: prefix means in seed order per group.
    let mut cumulative =
        String::from("budget,threshold,seed_index,seed,correct_count,cumulative_mean\n");
    for ((budget, threshold_bits), group) in &groups {
        let threshold = f64::from_bits(*threshold_bits);
        let (seeds, counts) = per_seed_counts(group);
        let agg = aggregate_seeds(&counts, &[])?;
        for (i, ((seed, count), mean)) in
            seeds.iter().zip(&counts).zip(&agg.cumulative_means).enumerate()
        {
            cumulative
                .push_str(&format!("{budget},{threshold},{i},{seed},{count},{mean}\n"));
        }
    }
    writer.write(CUMULATIVE_MEAN_CSV, cumulative.as_bytes())?;

    // grade_vs_tokens.csv: mean thinking tokens against mean grade, per
    // penalty, under the as-recorded abstention view.
    let mut grade_series =
        String::from("budget,threshold,penalty_c,mean_thinking_tokens,mean_grade\n");
    for ((budget, threshold_bits), group) in &groups {
        let threshold = f64::from_bits(*threshold_bits);
        let mean_tokens = group.iter().map(|r| r.thinking_tokens_used as f64).sum::<f64>()
            / group.len() as f64;
        for &penalty in &manifest.config.penalties {
            let (seeds, _) = per_seed_counts(group);
            let mut grades = Vec::with_capacity(seeds.len());
            for seed in &seeds {
                let seed_records: Vec<EvalRecord> =
                    group.iter().filter(|r| r.seed == *seed).map(|r| (*r).clone()).collect();
                grades.push(
                    grade_dataset(&seed_records, penalty, AbstentionPolicy::AsRecorded)?.grade,
                );
            }
            let mean_grade = grades.iter().sum::<f64>() / grades.len() as f64;
            grade_series.push_str(&format!(
                "{budget},{threshold},{penalty},{mean_tokens},{mean_grade}\n"
            ));
        }
    }
    writer.write(GRADE_VS_TOKENS_CSV, grade_series.as_bytes())?;

    // savings_per_question.csv: the difficulty ranking.
    let mut savings = String::from("question_id,mean_tokens_saved\n");
    for (id, mean) in rank_questions(&records) {
        savings.push_str(&format!("{},{mean}\n", csv_escape(&id)));
    }
    writer.write(SAVINGS_PER_QUESTION_CSV, savings.as_bytes())?;

    manifest.files = writer.digests();
    let manifest_bytes = to_json_pretty(&manifest)?;
    writer.write_untracked(MANIFEST_FILE, &manifest_bytes)?;

    Ok([
        ACCURACY_VS_BUDGET_CSV,
        CUMULATIVE_MEAN_CSV,
        GRADE_VS_TOKENS_CSV,
        SAVINGS_PER_QUESTION_CSV,
    ]
    .iter()
    .map(|rel| run_dir.join(rel))
    .collect())
}

/// Load and parse a run directory's manifest.
pub fn read_manifest(run_dir: &Path) -> Result<Manifest, Error> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::PlotData { missing: path.display().to_string() });
    }
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Input(format!("manifest {} is malformed: {e}", path.display())))
}

/// Load every trace envelope under `traces/`, sorted by (threshold, seed,
/// question id) for deterministic downstream output.
pub fn read_traces(run_dir: &Path) -> Result<Vec<TraceEnvelope>, Error> {
    let traces_dir = run_dir.join("traces");
    if !traces_dir.exists() {
        return Err(Error::PlotData { missing: traces_dir.display().to_string() });
    }
    let mut paths = Vec::new();
    collect_json_files(&traces_dir, &mut paths)?;
    paths.sort();
    let mut envelopes = Vec::with_capacity(paths.len());
    for path in paths {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let envelope: TraceEnvelope = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Input(format!("trace {} is malformed: {e}", path.display())))?;
        envelopes.push(envelope);
    }
    envelopes.sort_by(|a, b| {
        a.threshold
            .total_cmp(&b.threshold)
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.trace.question_id.cmp(&b.trace.question_id))
    });
    Ok(envelopes)
}

/// Load records.jsonl from a run directory.
pub fn read_records_jsonl(run_dir: &Path) -> Result<Vec<EvalRecord>, Error> {
    let path = run_dir.join(RECORDS_JSONL);
    if !path.exists() {
        return Err(Error::PlotData { missing: path.display().to_string() });
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| {
            Error::Input(format!("{}:{}: malformed record: {e}", path.display(), i + 1))
        })?);
    }
    Ok(records)
}

// --- internals ---

fn instantiate_per_seed(
    spec: &crate::backend::BackendSpec,
    seeds: &[u64],
) -> Result<BTreeMap<u64, Arc<dyn TokenBackend>>, Error> {
    let mut map = BTreeMap::new();
    for &seed in seeds {
        map.insert(seed, spec.instantiate(seed)?);
    }
    Ok(map)
}

/// Write all summary reports derived from the records. The grade report
/// covers every (threshold, budget, policy, penalty) combination with
/// per-seed grading averaged across seeds; savings are grouped per budget
/// so each summary sees a single budget, as its contract requires.
fn write_reports(
    writer: &mut OutputTracker,
    records: &[EvalRecord],
    config: &RunConfig,
) -> Result<(), Error> {
    let mut csv_bytes = Vec::new();
    write_records_csv(&mut csv_bytes, records)?;
    writer.write(RECORDS_CSV, &csv_bytes)?;

    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r).map_err(|e| {
            Error::Input(format!("record for {} failed to serialize: {e}", r.question_id))
        })?);
        jsonl.push('\n');
    }
    writer.write(RECORDS_JSONL, jsonl.as_bytes())?;

    // Group records by (budget, threshold).
    let mut groups: BTreeMap<(u64, u64), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        let budget = r.tokens_saved + r.thinking_tokens_used;
        groups.entry((budget, r.threshold.to_bits())).or_default().push(r);
    }

    // grades.csv: per group × policy × penalty, averaged across seeds.
    let mut grades = String::from(
        "budget,threshold,policy,penalty_c,seed_count,mean_correct,mean_wrong,\
         mean_abstained,mean_grade\n",
    );
    for ((budget, threshold_bits), group) in &groups {
        let threshold = f64::from_bits(*threshold_bits);
        let policies = [
            AbstentionPolicy::Never,
            AbstentionPolicy::AsRecorded,
            AbstentionPolicy::CertaintyBelow(threshold),
        ];
        let (seeds, _) = per_seed_counts(group);
        for policy in policies {
            for &penalty in &config.penalties {
                let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
                for seed in &seeds {
                    let seed_records: Vec<EvalRecord> =
                        group.iter().filter(|r| r.seed == *seed).map(|r| (*r).clone()).collect();
                    let report = grade_dataset(&seed_records, penalty, policy)?;
                    sums.0 += report.total_correct as f64;
                    sums.1 += report.total_wrong as f64;
                    sums.2 += report.total_abstained as f64;
                    sums.3 += report.grade;
                }
                let n = seeds.len() as f64;
                grades.push_str(&format!(
                    "{budget},{threshold},{policy},{penalty},{},{},{},{},{}\n",
                    seeds.len(),
                    sums.0 / n,
                    sums.1 / n,
                    sums.2 / n,
                    sums.3 / n
                ));
            }
        }
    }
    writer.write(GRADES_CSV, grades.as_bytes())?;

    // savings.csv + savings_table.txt, one summary per budget.
    let mut budgets: Vec<u64> = groups.keys().map(|(b, _)| *b).collect();
    budgets.dedup();
    let mut savings_csv = String::from(
        "budget,threshold,seed_count,question_count,total_saved,avg_per_seed,avg_per_question\n",
    );
    let mut savings_table = String::new();
    for budget in budgets {
        let budget_records: Vec<EvalRecord> = records
            .iter()
            .filter(|r| r.tokens_saved + r.thinking_tokens_used == budget)
            .cloned()
            .collect();
        let rows = tokens_saved_summary(&budget_records)?;
        for row in &rows {
            savings_csv.push_str(&format!(
                "{budget},{},{},{},{},{},{}\n",
                row.threshold,
                row.seed_count,
                row.question_count,
                row.total_saved,
                row.avg_per_seed,
                row.avg_per_question
            ));
        }
        if !savings_table.is_empty() {
            savings_table.push('\n');
        }
        savings_table.push_str(&format!("Budget {budget}\n"));
        savings_table.push_str(&crate::eval::format_savings_table(&rows));
    }
    writer.write(SAVINGS_CSV, savings_csv.as_bytes())?;
    writer.write(SAVINGS_TABLE, savings_table.as_bytes())?;

    // Seed aggregates per group, as JSON (full) and CSV (per-seed rows).
    #[derive(Serialize)]
    struct AggregateEntry {
        budget: u64,
        threshold: f64,
        aggregate: SeedAggregate,
    }
    let mut aggregate_entries = Vec::new();
    let mut aggregate_csv =
        String::from("budget,threshold,seed_index,seed,correct_count,cumulative_mean\n");
    for ((budget, threshold_bits), group) in &groups {
        let threshold = f64::from_bits(*threshold_bits);
        let (seeds, counts) = per_seed_counts(group);
        let mut grade_series = Vec::new();
        for &penalty in &config.penalties {
            let mut series = Vec::with_capacity(seeds.len());
            for seed in &seeds {
                let seed_records: Vec<EvalRecord> =
                    group.iter().filter(|r| r.seed == *seed).map(|r| (*r).clone()).collect();
                series
                    .push(grade_dataset(&seed_records, penalty, AbstentionPolicy::AsRecorded)?.grade);
            }
            grade_series.push((penalty, series));
        }
        let aggregate = aggregate_seeds(&counts, &grade_series)?;
        for (i, ((seed, count), mean)) in
            seeds.iter().zip(&counts).zip(&aggregate.cumulative_means).enumerate()
        {
            aggregate_csv.push_str(&format!(
                "{budget},{threshold},{i},{seed},{count},{mean}\n"
            ));
        }
        aggregate_entries.push(AggregateEntry { budget: *budget, threshold, aggregate });
    }
    writer.write(SEED_AGGREGATE_JSON, &to_json_pretty(&aggregate_entries)?)?;
    writer.write(SEED_AGGREGATE_CSV, aggregate_csv.as_bytes())?;

    // ranking.csv over all records.
    let mut ranking = String::from("question_id,mean_tokens_saved\n");
    for (id, mean) in rank_questions(records) {
        ranking.push_str(&format!("{},{mean}\n", csv_escape(&id)));
    }
    writer.write(RANKING_CSV, ranking.as_bytes())?;

    Ok(())
}

/// Canonical record order shared by fresh runs and report regeneration:
/// threshold, then budget, then seed, then question id.
fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        a.threshold
            .total_cmp(&b.threshold)
            .then_with(|| {
                (a.tokens_saved + a.thinking_tokens_used)
                    .cmp(&(b.tokens_saved + b.thinking_tokens_used))
            })
            .then_with(|| a.seed.cmp(&b.seed))
            .then_with(|| a.question_id.cmp(&b.question_id))
    });
}

/// Per-seed correct counts for one record group, in ascending seed order.
fn per_seed_counts(group: &[&EvalRecord]) -> (Vec<u64>, Vec<u64>) {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for r in group {
        *counts.entry(r.seed).or_insert(0) += u64::from(r.correct);
    }
    (counts.keys().copied().collect(), counts.values().copied().collect())
}

fn seed_aggregate_of(group: &[&EvalRecord], grades: &[(f64, Vec<f64>)]) -> Result<SeedAggregate, Error> {
    let (_, counts) = per_seed_counts(group);
    aggregate_seeds(&counts, grades)
}

/// Relative path of one trace file inside the run directory.
fn trace_rel_path(envelope: &TraceEnvelope) -> String {
    format!(
        "traces/{}/th_{}/b_{}/seed_{}/{}.json",
        envelope.mode,
        envelope.threshold,
        envelope.trace.budget,
        envelope.seed,
        safe_file_stem(&envelope.trace.question_id)
    )
}

/// Make an arbitrary question id filesystem-safe; ids that need mangling
/// get a digest suffix so distinct ids cannot collide.
fn safe_file_stem(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == id && !id.is_empty() {
        safe
    } else {
        format!("{safe}-{}", &sha256_hex(id.as_bytes())[..8])
    }
}

fn collect_json_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_json_files(&path, out)?;
        } else if path.extension().is_some_and(|ext| ext == "json") {
            out.push(path);
        }
    }
    Ok(())
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, Error> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Input(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn to_json_compact<T: Serialize>(value: &T) -> Result<Vec<u8>, Error> {
    serde_json::to_vec(value).map_err(|e| Error::Input(format!("serialization failed: {e}")))
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Writes files atomically (temp-then-rename in the destination directory)
/// and records a content digest for the manifest.
struct OutputTracker {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputTracker {
    fn new(root: &Path) -> Self {
        OutputTracker { root: root.to_path_buf(), files: BTreeMap::new() }
    }

    /// Record a file that already exists with a known digest.
    fn track(&mut self, rel: String, sha256: String) {
        self.files.insert(rel, sha256);
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), Error> {
        self.write_untracked(rel, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Atomic write without a manifest entry (used for the manifest
    /// itself, which cannot contain its own digest).
    fn write_untracked(&self, rel: &str, bytes: &[u8]) -> Result<(), Error> {
        let path = self.root.join(rel);
        let dir = path.parent().unwrap_or(&self.root);
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.tmp-{}-{}",
            path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.subsec_nanos())
                .unwrap_or(0),
        ));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn digests(&self) -> Vec<FileDigest> {
        self.files
            .iter()
            .map(|(path, sha256)| FileDigest { path: path.clone(), sha256: sha256.clone() })
            .collect()
    }
}
