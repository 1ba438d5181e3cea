//! `leadwatch` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::layer::SubscriberExt;
use tracing_subscriber::util::SubscriberInitExt;
use tracing_subscriber::{EnvFilter, Layer};

use leadwatch::digest::{render_digest, select_leads, DigestFormat, DigestSpec};
use leadwatch::eval::{
    agreement_pairs, agreement_table, coverage_metrics, coverage_table, evaluate_coverage, format_fixed,
    load_annotations, load_model_outputs, pairwise_kappa, parse_overrides, rating_agreement, triage_metrics,
    AgreementReport, AnnotationSet, CoverageReport, TableFormat, DEFAULT_TAU,
};
use leadwatch::par::Execution;
use leadwatch::runner::{Pipeline, RunError, RunReport};
use leadwatch::schedule::{schedule_loop, SystemClock};
use leadwatch::{LeadStore, PipelineConfig};

/// Weekly article volume used for the projected-cost report line.
const REFERENCE_WEEKLY_ARTICLES: f64 = 89.0;

#[derive(Parser)]
#[command(name = "leadwatch", version, about = "Monitor alert feeds for AI-in-newsroom leads")]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true, env = "LEADWATCH_CONFIG", default_value = "leadwatch.json")]
    config: PathBuf,
    /// More detail on stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a starter configuration file.
    Init {
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Run the pipeline once. The API key is read from the environment
    /// variable named by `model.api_key_env` in the config.
    Run,
    /// Run daily at the configured UTC time; catches up once on start if
    /// the latest window was missed.
    Watch {
        /// Stop after this many runs.
        #[arg(long)]
        max_runs: Option<u64>,
    },
    /// Render leads at or above a newsworthiness threshold.
    Digest(DigestArgs),
    /// Dump every stored lead, duplicates included.
    Export {
        /// csv or jsonl.
        #[arg(long, default_value = "jsonl")]
        format: DigestFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluation metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct DigestArgs {
    /// Minimum newsworthiness rating, 1-5 [default: from config].
    #[arg(long)]
    threshold: Option<f64>,
    /// Only leads first seen at or after this time (RFC 3339 or YYYY-MM-DD, UTC).
    #[arg(long, value_parser = parse_since)]
    since: Option<DateTime<Utc>>,
    /// markdown, csv or jsonl [default: from config].
    #[arg(long)]
    format: Option<DigestFormat>,
    /// Also list leads marked as duplicates.
    #[arg(long)]
    include_duplicates: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Precision, recall and F1 of use-case identification.
    Coverage {
        #[command(flatten)]
        counts: Counts,
        #[command(flatten)]
        files: MatchFiles,
        /// text, markdown, csv or latex.
        #[arg(long, default_value = "text")]
        format: OutFormat,
    },
    /// Agreement of model ratings with mean human ratings.
    Agreement {
        #[command(flatten)]
        files: MatchFiles,
        /// CSV of `pred,human` rows instead of truth/model files.
        #[arg(long, conflicts_with_all = ["truth", "model"])]
        pairs: Option<PathBuf>,
        /// text, markdown, csv or latex.
        #[arg(long, default_value = "text")]
        format: OutFormat,
    },
    /// Pairwise Cohen's kappa between annotators.
    Kappa {
        /// Ground-truth JSONL with per-annotator ratings.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Precision and recall of flagging high-newsworthiness items.
    Triage {
        /// Model ratings, comma separated.
        #[arg(long, value_delimiter = ',', requires = "human")]
        pred: Vec<f64>,
        /// Human ratings, comma separated.
        #[arg(long, value_delimiter = ',', requires = "pred")]
        human: Vec<f64>,
        /// CSV of `pred,human` rows instead of the lists.
        #[arg(long, conflicts_with_all = ["pred", "human"])]
        pairs: Option<PathBuf>,
        /// Ratings at or above this count as positive.
        #[arg(long, default_value_t = 4.0)]
        threshold: f64,
    },
}

#[derive(Args)]
struct Counts {
    /// True positives.
    #[arg(long, requires_all = ["fp", "fn_"], conflicts_with_all = ["truth", "model"])]
    tp: Option<i64>,
    /// False positives.
    #[arg(long, requires = "tp")]
    fp: Option<i64>,
    /// False negatives.
    #[arg(long = "fn", id = "fn_", requires = "tp")]
    fn_: Option<i64>,
    /// Row label for count input.
    #[arg(long, default_value = "model")]
    label: String,
}

#[derive(Args)]
struct MatchFiles {
    /// Ground-truth use cases, JSONL.
    #[arg(long, requires = "model")]
    truth: Option<PathBuf>,
    /// Model output as LABEL=PATH (JSONL); repeat per model.
    #[arg(long, value_parser = parse_model_arg, requires = "truth")]
    model: Vec<(String, PathBuf)>,
    /// Manual `extracted_index,gt_id` pairs applied before greedy matching.
    #[arg(long)]
    overrides: Option<PathBuf>,
    /// Minimum token Jaccard similarity for a match.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Clone, Copy, PartialEq)]
enum OutFormat {
    Text,
    Table(TableFormat),
}

impl std::str::FromStr for OutFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("text") {
            Ok(OutFormat::Text)
        } else {
            s.parse().map(OutFormat::Table)
        }
    }
}

fn parse_model_arg(s: &str) -> Result<(String, PathBuf), String> {
    let (label, path) = s.split_once('=').ok_or("expected LABEL=PATH")?;
    if label.is_empty() || path.is_empty() {
        return Err("expected LABEL=PATH".into());
    }
    Ok((label.to_string(), PathBuf::from(path)))
}

fn parse_since(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap().and_utc())
        .map_err(|_| format!("{s:?} is neither RFC 3339 nor YYYY-MM-DD"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Init { force } => {
            init_stderr_logging(cli.verbose);
            init(&cli.config, force)
        }
        Command::Run => {
            let config = load_config(&cli.config)?;
            init_run_logging(&config.log_path, cli.verbose)?;
            run(config)
        }
        Command::Watch { max_runs } => {
            let config = load_config(&cli.config)?;
            init_run_logging(&config.log_path, cli.verbose)?;
            watch(config, max_runs)
        }
        Command::Digest(args) => {
            init_stderr_logging(cli.verbose);
            digest(&load_config(&cli.config)?, args)
        }
        Command::Export { format, output } => {
            init_stderr_logging(cli.verbose);
            export(&load_config(&cli.config)?, format, output)
        }
        Command::Eval(cmd) => {
            init_stderr_logging(cli.verbose);
            eval(cmd)
        }
    }
}

fn stderr_filter(verbose: u8) -> EnvFilter {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    EnvFilter::try_from_env("LEADWATCH_LOG").unwrap_or_else(|_| EnvFilter::new(level))
}

fn init_stderr_logging(verbose: u8) {
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(stderr_filter(verbose))
        .try_init();
}

/// Human-readable stderr plus one JSON object per event in the run log.
fn init_run_logging(log_path: &Path, verbose: u8) -> Result<()> {
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .with_context(|| format!("opening run log {}", log_path.display()))?;
    let json = tracing_subscriber::fmt::layer()
        .json()
        .with_writer(Mutex::new(file))
        .with_filter(EnvFilter::new("info"));
    let human = tracing_subscriber::fmt::layer()
        .with_writer(std::io::stderr)
        .with_filter(stderr_filter(verbose));
    let _ = tracing_subscriber::registry().with(json).with(human).try_init();
    Ok(())
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    if !path.exists() {
        bail!(
            "config file {} not found; create one with `leadwatch init`",
            path.display()
        );
    }
    Ok(PipelineConfig::load(path)?)
}

fn init(path: &Path, force: bool) -> Result<ExitCode> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    let mut text = PipelineConfig::starter().to_json();
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    println!("replace the placeholder feed URLs and set enabled = true, then export the API key variable");
    Ok(ExitCode::SUCCESS)
}

fn print_run(report: &RunReport, config: &PipelineConfig) {
    let r = &report.record;
    println!("{}", serde_json::to_string_pretty(r).expect("run record serializes"));
    println!(
        "new leads: {} primary, {} duplicate",
        report.primaries_inserted, report.duplicates_marked
    );
    println!(
        "estimated cost: ${:.4} this run, ${:.4} per week at one run per day",
        r.estimated_cost,
        leadwatch::runner::projected_cost(r, 7)
    );
    if r.articles_processed > 0 {
        let per_article = config.cost(r.input_tokens, r.output_tokens) / r.articles_processed as f64;
        println!(
            "at {REFERENCE_WEEKLY_ARTICLES} articles per week: ${:.4} per week",
            per_article * REFERENCE_WEEKLY_ARTICLES
        );
    }
}

fn run(config: PipelineConfig) -> Result<ExitCode> {
    let mut pipeline = Pipeline::from_config(config)?;
    let report = pipeline.run_once()?;
    print_run(&report, pipeline.config());
    if report.all_failed() {
        eprintln!(
            "error: all {} attempted articles failed; see the run log",
            report.record.articles_failed
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn watch(config: PipelineConfig, max_runs: Option<u64>) -> Result<ExitCode> {
    let schedule = config.schedule;
    let mut pipeline = Pipeline::from_config(config)?;
    let last = pipeline.store().last_run_started()?;
    let stop = AtomicBool::new(false);
    let mut done = 0u64;
    tracing::info!(%schedule, "watching");
    schedule_loop(schedule, last, &SystemClock, &stop, || {
        let result = pipeline.run_once();
        if !matches!(result, Err(RunError::Busy)) {
            done += 1;
            if max_runs.is_some_and(|m| done >= m) {
                stop.store(true, Ordering::Release);
            }
        }
        let report = result?;
        print_run(&report, pipeline.config());
        Ok(())
    });
    Ok(ExitCode::SUCCESS)
}

fn write_output(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn digest(config: &PipelineConfig, args: DigestArgs) -> Result<ExitCode> {
    let threshold = args.threshold.unwrap_or(config.digest.threshold);
    let format = args.format.unwrap_or(config.digest.format);
    let mut spec = DigestSpec::new(threshold, format)?;
    spec.since = args.since;
    spec.include_duplicates = args.include_duplicates || config.digest.include_duplicates;
    let store = LeadStore::open(&config.database_path)?;
    let leads = select_leads(&store, &spec)?;
    write_output(&render_digest(&leads, format), args.output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn export(config: &PipelineConfig, format: DigestFormat, output: Option<PathBuf>) -> Result<ExitCode> {
    if format == DigestFormat::Markdown {
        bail!("export supports csv and jsonl");
    }
    let store = LeadStore::open(&config.database_path)?;
    let leads = store.all_leads()?;
    write_output(&render_digest(&leads, format), output.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn opt3(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), |v| format_fixed(v, 3))
}

fn coverage_text(label: &str, r: &CoverageReport) -> String {
    let pct = |x: Option<f64>| x.map_or_else(|| "undefined".into(), |v| format_fixed(v, 1));
    format!(
        "{label}: tp {} fp {} fn {}\nprecision {} recall {} f1 {}\nfp% {} fn% {}\n",
        r.tp,
        r.fp,
        r.fn_,
        opt3(r.precision),
        opt3(r.recall),
        opt3(r.f1),
        pct(r.fp_pct),
        pct(r.fn_pct)
    )
}

fn agreement_text(label: &str, r: &AgreementReport) -> String {
    format!(
        "{label}: n {}\nmae {} rmse {} r2 {} pearson {}\nexact {} within_one {}\n",
        r.n,
        format_fixed(r.mae, 3),
        format_fixed(r.rmse, 3),
        opt3(r.r_squared),
        opt3(r.pearson_r),
        format_fixed(r.exact_accuracy, 3),
        format_fixed(r.within_one_accuracy, 3)
    )
}

fn read_pairs(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut pred, mut human) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (p, h) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("{}:{}: expected pred,human", path.display(), i + 1))?;
        match (p.trim().parse::<f64>(), h.trim().parse::<f64>()) {
            (Ok(p), Ok(h)) => {
                pred.push(p);
                human.push(h);
            }
            // Header row.
            _ if i == 0 => continue,
            _ => bail!("{}:{}: non-numeric rating", path.display(), i + 1),
        }
    }
    Ok((pred, human))
}

fn load_overrides(path: Option<&Path>) -> Result<Vec<(usize, String)>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(parse_overrides(&text)?)
        }
    }
}

fn eval(cmd: EvalCommand) -> Result<ExitCode> {
    let exec = Execution::default();
    match cmd {
        EvalCommand::Coverage { counts, files, format } => {
            let rows: Vec<(String, CoverageReport)> = match (counts.tp, files.truth) {
                (Some(tp), _) => vec![(
                    counts.label,
                    coverage_metrics(tp, counts.fp.unwrap_or(0), counts.fn_.unwrap_or(0))?,
                )],
                (None, Some(truth)) => {
                    let truth = load_annotations(&truth)?;
                    let overrides = load_overrides(files.overrides.as_deref())?;
                    files
                        .model
                        .iter()
                        .map(|(label, path)| {
                            let outputs = load_model_outputs(path)?;
                            let ev = evaluate_coverage(exec, &truth, &outputs, files.tau, &overrides)?;
                            Ok((label.clone(), ev.report))
                        })
                        .collect::<Result<_>>()?
                }
                (None, None) => bail!("give either --tp/--fp/--fn or --truth with --model"),
            };
            let text = match format {
                OutFormat::Text => rows.iter().map(|(l, r)| coverage_text(l, r)).collect(),
                OutFormat::Table(t) => coverage_table(&rows, t),
            };
            print!("{text}");
        }
        EvalCommand::Agreement { files, pairs, format } => {
            let rows: Vec<(String, AgreementReport)> = match (pairs, files.truth) {
                (Some(path), _) => {
                    let (pred, human) = read_pairs(&path)?;
                    vec![("pairs".into(), rating_agreement(&pred, &human)?)]
                }
                (None, Some(truth)) => {
                    let truth = load_annotations(&truth)?;
                    let overrides = load_overrides(files.overrides.as_deref())?;
                    files
                        .model
                        .iter()
                        .map(|(label, path)| {
                            let outputs = load_model_outputs(path)?;
                            let ev = evaluate_coverage(exec, &truth, &outputs, files.tau, &overrides)?;
                            let (pred, human) = agreement_pairs(&truth, &outputs, &ev.matches)?;
                            Ok((label.clone(), rating_agreement(&pred, &human)?))
                        })
                        .collect::<Result<_>>()?
                }
                (None, None) => bail!("give either --pairs or --truth with --model"),
            };
            let text = match format {
                OutFormat::Text => rows.iter().map(|(l, r)| agreement_text(l, r)).collect(),
                OutFormat::Table(t) => agreement_table(&rows, t),
            };
            print!("{text}");
        }
        EvalCommand::Kappa { truth } => {
            let set = AnnotationSet::new(load_annotations(&truth)?, None)?;
            let k = pairwise_kappa(&set)?;
            for ((a, b), v) in &k.pairs {
                println!("{a} {b} {}", opt3(*v));
            }
            println!("min {} max {}", opt3(k.min), opt3(k.max));
        }
        EvalCommand::Triage {
            pred,
            human,
            pairs,
            threshold,
        } => {
            let (pred, human) = match pairs {
                Some(path) => read_pairs(&path)?,
                None if pred.is_empty() => bail!("give --pred and --human, or --pairs"),
                None => (pred, human),
            };
            let r = triage_metrics(&pred, &human, threshold)?;
            print!("{}", coverage_text(&format!("threshold >= {threshold}"), &r));
        }
    }
    Ok(ExitCode::SUCCESS)
}
