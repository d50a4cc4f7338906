//! `cgr` — run certainty-guided reasoning experiments from the command
//! line: single runs, threshold/budget sweeps, report regeneration, and
//! plot-data emission.
//!
//! Configuration precedence, per field: command-line flag, then config
//! file (`--config`, flat TOML with the same names as the flags), then the
//! built-in default. The `CGR_BACKEND_URL` environment variable supplies a
//! remote backend address when neither flag nor file names a backend.
//!
//! Exit codes: 0 success, 1 configuration error, 2 backend error, 3 data
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgr_core::config::{
    load_file_config, parse_f64_list, parse_seed_list, parse_u64_list, FileConfig,
    BACKEND_URL_ENV,
};
use cgr_core::runner::RunSummary;
use cgr_core::{Error, RunConfig};

#[derive(Parser)]
#[command(
    name = "cgr",
    version,
    about = "Certainty-guided reasoning: adaptive early-exit decoding and its evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every dataset question under one mode, threshold, and budget.
    Run(RunArgs),
    /// Run a threshold × budget matrix into one run directory.
    Sweep(SweepArgs),
    /// Rebuild all summary reports from a run directory's traces.
    Report {
        /// Run directory produced by `run` or `sweep`.
        run_dir: PathBuf,
    },
    /// Emit plot-ready CSV series from a finished run directory.
    Plotdata {
        /// Run directory produced by `run` or `sweep`.
        run_dir: PathBuf,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// Config file (flat TOML, same keys as these flags).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Decoding mode: baseline, budget-forcing, cgr, or cgr-with-forcing.
    #[arg(long)]
    mode: Option<String>,
    /// Thinking-token budget B.
    #[arg(long)]
    budget: Option<u64>,
    /// Certainty threshold θ in [0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Probe every I thinking tokens.
    #[arg(long)]
    interval: Option<u64>,
    /// Seeds: comma list and/or exclusive ranges, e.g. "42" or "0..64".
    #[arg(long)]
    seeds: Option<String>,
    /// Grade penalties c, e.g. "0,0.25,0.5,1.0".
    #[arg(long)]
    penalties: Option<String>,
    /// Generation backend spec: mock:[key=val,...], trace:PATH, or
    /// remote:URL[,timeout_ms=N,...].
    #[arg(long)]
    backend: Option<String>,
    /// Probe backend spec; defaults to the generation backend.
    #[arg(long)]
    probe_backend: Option<String>,
    /// System prompt prepended to every question.
    #[arg(long)]
    system_prompt: Option<String>,
    /// Prompt format string with {system} and {question} placeholders.
    #[arg(long)]
    prompt_template: Option<String>,
    /// Cap on tokens decoded during forced answer extraction.
    #[arg(long)]
    max_answer_tokens: Option<usize>,
    /// Question dataset (JSON lines: id, question, answer).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Threshold axis, e.g. "0.96,0.97,0.98,0.99"; defaults to the single
    /// configured threshold.
    #[arg(long)]
    thresholds: Option<String>,
    /// Budget axis, e.g. "1000,2000,4000"; defaults to the single
    /// configured budget.
    #[arg(long)]
    budgets: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1, // bad flags are configuration errors
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let resolved = resolve(&args)?;
            let summary =
                cgr_core::run_experiment(&resolved.config, &resolved.dataset, &resolved.out)?;
            print_summary("run", &summary);
            Ok(())
        }
        Command::Sweep(args) => {
            let resolved = resolve(&args.run)?;
            let file = resolved.file;
            let thresholds = match args.thresholds.or(file.thresholds) {
                Some(list) => parse_f64_list(&list)?,
                None => vec![resolved.config.threshold],
            };
            let budgets = match args.budgets.or(file.budgets) {
                Some(list) => parse_u64_list(&list)?,
                None => vec![resolved.config.budget],
            };
            let summary = cgr_core::run_matrix(
                &resolved.config,
                &thresholds,
                &budgets,
                &resolved.dataset,
                &resolved.out,
            )?;
            print_summary("sweep", &summary);
            Ok(())
        }
        Command::Report { run_dir } => {
            let summary = cgr_core::regenerate_reports(&run_dir)?;
            print_summary("report", &summary);
            Ok(())
        }
        Command::Plotdata { run_dir } => {
            let files = cgr_core::emit_plot_data(&run_dir)?;
            println!("plot data written:");
            for f in files {
                println!("  {}", f.display());
            }
            Ok(())
        }
    }
}

struct Resolved {
    config: RunConfig,
    dataset: PathBuf,
    out: PathBuf,
    /// Raw file config, for sweep-only keys.
    file: FileConfig,
}

/// Merge defaults ← config file ← flags, then validate.
fn resolve(args: &RunArgs) -> Result<Resolved, Error> {
    let file = match &args.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };

    let mut config = RunConfig::default();
    config.apply_file(&file)?;

    if let Some(mode) = &args.mode {
        config.mode = mode.parse()?;
    }
    if let Some(budget) = args.budget {
        config.budget = budget;
    }
    if let Some(threshold) = args.threshold {
        config.threshold = threshold;
    }
    if let Some(interval) = args.interval {
        config.probe_interval = interval;
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = parse_seed_list(seeds)?;
    }
    if let Some(penalties) = &args.penalties {
        config.penalties = parse_f64_list(penalties)?;
    }
    if let Some(backend) = &args.backend {
        config.backend = backend.parse()?;
    }
    if let Some(probe) = &args.probe_backend {
        config.probe_backend = Some(probe.parse()?);
    }
    if let Some(system) = &args.system_prompt {
        config.system_prompt = system.clone();
    }
    if let Some(template) = &args.prompt_template {
        config.prompt_template = template.clone();
    }
    if let Some(max) = args.max_answer_tokens {
        config.max_answer_tokens = max;
    }

    // Backend address fallback: only when nothing else named a backend.
    if args.backend.is_none() && file.backend.is_none() {
        if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
            if !url.trim().is_empty() {
                config.backend = format!("remote:{}", url.trim()).parse()?;
            }
        }
    }

    // Validation (including the low-threshold warning) happens inside the
    // runner, before any work; bad merges still exit with a config error.
    let dataset = args
        .dataset
        .clone()
        .or_else(|| file.dataset.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("--dataset is required (flag or config file)".into()))?;
    let out = args
        .out
        .clone()
        .or_else(|| file.out.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config("--out is required (flag or config file)".into()))?;

    Ok(Resolved { config, dataset, out, file })
}

fn print_summary(verb: &str, summary: &RunSummary) {
    println!(
        "{verb} complete: {} record(s), {} failure(s)",
        summary.record_count, summary.failure_count
    );
    println!("  run directory: {}", summary.out_dir.display());
    println!("  index: {}", summary.out_dir.join("manifest.json").display());
}
