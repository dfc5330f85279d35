//! The `vidqg` command line.
//!
//! Every subcommand reads an optional JSON run configuration (`--config`),
//! applies environment overrides, then flag overrides. Exit status is 0 on
//! success, 1 when the pipeline rejects the data, 2 on usage errors.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use vidqg_core::agreement::{
    agreement_report, aggregate_annotations, rating_matrix, read_annotations_csv, sample_batch,
    AgreementReport, AlphaOutcome, Dimension, EvaluationBatch, MetricLevel, QualRow, Resolution, SampleSpec,
};
use vidqg_core::corpus::{corpus_stats, filter_questions, format_hms, load_corpus, split_corpus, split_stats, Corpus, Source, SplitAssignment, SourceStats};
use vidqg_core::embed::{EmbeddingProvider, HttpEmbedder, HttpEmbedderConfig, LocalEmbedder};
use vidqg_core::harness::{
    load_records, run_experiment, ExperimentConfig, GenerationBackend, HttpBackend, MockBackend, PromptMode,
    RECORDS_FILE,
};
use vidqg_core::par::Execution;
use vidqg_core::report::{
    duplicate_table, ground_truth_length_flesch, ground_truth_question_words, length_flesch_table, question_word_table,
    render, render_header, summarize_run_scoped, Cell, Format, Scope, TableRow,
};
use vidqg_core::score::{load_scores, score_records, write_scores, ScoreConfig, SCORES_FILE};

use crate::config::{parse_modes, parse_ratios, BackendConfig, RunConfig, MOCK_BACKEND};

pub const SPLIT_FILE: &str = "split.json";
pub const BATCH_FILE: &str = "batch.json";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl From<vidqg_core::Error> for CliError {
    fn from(e: vidqg_core::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<vidqg_annosvc::ServiceError> for CliError {
    fn from(e: vidqg_annosvc::ServiceError) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vidqg", version, about = "Generate and evaluate questions about educational videos")]
pub struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration, or a run manifest to replay.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Run directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Output format; `report` writes all three when omitted.
    #[arg(long, global = true, value_parser = parse_format, value_name = "csv|json|md")]
    format: Option<Format>,
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a corpus and check its invariants.
    Validate { corpus: Option<PathBuf> },
    /// Corpus and split statistics.
    Stats {
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        split: Option<PathBuf>,
    },
    /// Seeded train/val/test split of the videos.
    Split {
        corpus: Option<PathBuf>,
        #[arg(long, value_parser = parse_ratios, value_name = "A,B,C")]
        ratios: Option<[f64; 3]>,
    },
    /// Prompt generation backends for every video and mode.
    Generate {
        corpus: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_name = "NAME[,NAME...]")]
        backends: Option<Vec<String>>,
        #[arg(long, value_parser = parse_mode_list, value_name = "LIST")]
        modes: Option<ModeList>,
        /// Restrict to one subset of a split file.
        #[arg(long, value_name = "PATH")]
        split: Option<PathBuf>,
        #[arg(long, default_value = "test", requires = "split", value_parser = ["train", "val", "test"])]
        subset: String,
    },
    /// Score the outputs of a run.
    Score {
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "URL|local")]
        provider: Option<String>,
        #[arg(long, value_name = "N")]
        pool_cap: Option<usize>,
    },
    /// Render the report tables of a run.
    Report {
        corpus: Option<PathBuf>,
        /// Annotation CSV for the qualitative table.
        #[arg(long, value_name = "PATH")]
        annotations: Option<PathBuf>,
        /// Evaluation batch the annotations refer to (default: <out>/batch.json).
        #[arg(long, value_name = "PATH")]
        batch: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "post")]
        resolution: ResolutionArg,
        /// Count statements as well as questions in the structure tables.
        #[arg(long)]
        include_statements: bool,
        /// Average metrics over questions only.
        #[arg(long)]
        questions_only_metrics: bool,
    },
    /// Draw the human evaluation batch from a run.
    Sample {
        corpus: Option<PathBuf>,
        /// Videos per source, e.g. `teded=3,khan=3`.
        #[arg(long, value_parser = parse_quota, value_name = "SOURCE=N,...")]
        per_source: Option<BTreeMap<Source, usize>>,
        #[arg(long, default_value_t = 1)]
        iteration: usize,
    },
    /// Serve a batch to raters over HTTP.
    Serve {
        #[arg(long, value_name = "PATH")]
        batch: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080", value_name = "ADDR")]
        bind: String,
        /// Allowed CORS origin; repeatable. Any origin when omitted.
        #[arg(long = "cors-origin", value_name = "ORIGIN")]
        cors_origins: Vec<String>,
        #[arg(long, default_value_t = vidqg_annosvc::DEFAULT_EXCERPT_SENTENCES)]
        excerpt_sentences: usize,
    },
    /// Krippendorff's alpha over an annotation CSV.
    Agreement {
        #[arg(long, value_name = "PATH")]
        annotations: Option<PathBuf>,
        /// Distance for Bloom levels.
        #[arg(long, value_enum, default_value = "nominal")]
        bloom_level: LevelArg,
    },
}

#[derive(Debug, Clone)]
struct ModeList(Vec<PromptMode>);

fn parse_mode_list(s: &str) -> Result<ModeList, String> {
    parse_modes(s).map(ModeList)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ResolutionArg {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Nominal,
    Ordinal,
}

fn parse_quota(s: &str) -> Result<BTreeMap<Source, usize>, String> {
    s.split(',')
        .map(|part| {
            let (name, n) = part.split_once('=').ok_or_else(|| format!("{part:?}: expected SOURCE=N"))?;
            let source: Source =
                serde_json::from_value(serde_json::Value::String(name.trim().into())).map_err(|e| e.to_string())?;
            let n = n.trim().parse::<usize>().map_err(|e| format!("{n:?}: {e}"))?;
            Ok((source, n))
        })
        .collect()
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}\n\n{}", Cli::command().render_usage()),
                CliError::Domain(m) => eprintln!("error: {m}"),
            }
            e.exit_code()
        }
    }
}

fn env_var(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

fn base_config(global: &Global, corpus: Option<PathBuf>) -> CliResult<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env_var);
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = out.clone();
    }
    if corpus.is_some() {
        cfg.corpus = corpus;
    }
    Ok(cfg)
}

fn exec(global: &Global) -> Execution {
    if global.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load_filtered(cfg: &RunConfig) -> CliResult<Corpus> {
    Ok(filter_questions(load_corpus(cfg.corpus_path()?)?, &cfg.filter))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Domain(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn table<T: TableRow>(rows: &[T], format: Format) -> CliResult<String> {
    if rows.is_empty() {
        Ok(render_header::<T>(format))
    } else {
        Ok(render(rows, format)?)
    }
}

fn execute(cli: Cli) -> CliResult {
    let g = &cli.global;
    match cli.command {
        Command::Validate { corpus } => {
            let cfg = base_config(g, corpus)?;
            cfg.validate()?;
            let path = cfg.corpus_path()?;
            let raw = load_corpus(path)?;
            let filtered = filter_questions(raw.clone(), &cfg.filter);
            let before: usize = raw.videos.iter().map(|v| v.questions.len()).sum();
            let after: usize = filtered.videos.iter().map(|v| v.questions.len()).sum();
            println!("{}: {} videos, {before} questions ({after} after filtering)", path.display(), raw.videos.len());
            for (key, value) in &filtered.provenance {
                println!("note: {key}: {value}");
            }
            Ok(())
        }
        Command::Stats { corpus, split } => {
            let cfg = base_config(g, corpus)?;
            let corpus = load_filtered(&cfg)?;
            let format = g.format.unwrap_or_default();
            let stats = corpus_stats(&corpus);
            let mut rows: Vec<StatsRow> = stats
                .per_source
                .iter()
                .map(|(s, st)| StatsRow::new(s.to_string(), st))
                .collect();
            rows.push(StatsRow::new("total".into(), &stats.total));
            print!("{}", table(&rows, format)?);
            if let Some(path) = split {
                let assignment = load_split(&path)?;
                let rows: Vec<SplitRow> = split_stats(&corpus, &assignment)
                    .into_iter()
                    .map(|c| SplitRow {
                        subset: c.subset,
                        source: c.source.map_or_else(|| "all".into(), |s| s.to_string()),
                        videos: c.videos,
                        questions: c.questions,
                    })
                    .collect();
                println!();
                print!("{}", table(&rows, format)?);
            }
            Ok(())
        }
        Command::Split { corpus, ratios } => {
            let mut cfg = base_config(g, corpus)?;
            if let Some(r) = ratios {
                cfg.ratios = r;
            }
            cfg.validate()?;
            let corpus = load_filtered(&cfg)?;
            let split = split_corpus(&corpus, cfg.ratios, cfg.seed)?;
            let path = cfg.out.join(SPLIT_FILE);
            write_file(&path, &split.to_json())?;
            println!(
                "{}: train {} / val {} / test {}",
                path.display(),
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
            Ok(())
        }
        Command::Generate { corpus, backends, modes, split, subset } => {
            let mut cfg = base_config(g, corpus)?;
            if let Some(b) = backends {
                cfg.selected_backends = b;
            }
            if let Some(ModeList(m)) = modes {
                cfg.modes = m;
            }
            cfg.validate()?;
            let corpus = load_filtered(&cfg)?;
            let video_ids: Vec<String> = match &split {
                Some(path) => load_split(path)?.subset(&subset).expect("validated by clap").to_vec(),
                None => corpus.videos.iter().map(|v| v.id.clone()).collect(),
            };
            let timeout = Duration::from_secs(cfg.timeout_seconds);
            let backends: Vec<Arc<dyn GenerationBackend>> = cfg
                .resolve_backends(env_var)?
                .into_iter()
                .map(|b| make_backend(b, timeout))
                .collect::<CliResult<_>>()?;
            let experiment = ExperimentConfig {
                seed: cfg.seed,
                params: cfg.params.clone(),
                retry: cfg.retry,
                max_in_flight: cfg.max_in_flight,
                exec: exec(g),
                config_hash: cfg.hash(),
                config: cfg.to_value(),
                ..ExperimentConfig::new(&cfg.out)
            };
            let artifact = run_experiment(&video_ids, &corpus, &backends, &cfg.modes, &experiment)?;
            let m = &artifact.manifest;
            println!(
                "{}: {} records ({} new, {} requests)",
                artifact.records_path.display(),
                m.records_total,
                m.records_new,
                m.requests_sent
            );
            for (backend, reason) in &m.unreachable {
                eprintln!("warning: backend {backend} unreachable: {reason}");
            }
            Ok(())
        }
        Command::Score { corpus, provider, pool_cap } => {
            let mut cfg = base_config(g, corpus)?;
            if let Some(p) = provider {
                cfg.provider = p;
            }
            if pool_cap.is_some() {
                cfg.pool_cap = pool_cap;
            }
            cfg.validate()?;
            let corpus = load_filtered(&cfg)?;
            let records = load_records(cfg.out.join(RECORDS_FILE))?;
            let provider = make_provider(&cfg);
            let score_cfg = ScoreConfig {
                icd_domains: cfg.icd_domains.clone(),
                pool_cap: cfg.pool_cap,
                seed: cfg.seed,
                baseline: cfg.semantic_baseline,
                exec: exec(g),
            };
            let rows = score_records(&records, &corpus, provider.as_ref(), &score_cfg)?;
            let path = cfg.out.join(SCORES_FILE);
            write_scores(&path, &rows)?;
            println!("{}: {} rows", path.display(), rows.len());
            Ok(())
        }
        Command::Report { corpus, annotations, batch, resolution, include_statements, questions_only_metrics } => {
            let cfg = base_config(g, corpus)?;
            let records = load_records(cfg.out.join(RECORDS_FILE))?;
            let scores_path = cfg.out.join(SCORES_FILE);
            let scores = if scores_path.exists() {
                load_scores(&scores_path)?
            } else {
                eprintln!("note: {} not found; metric columns left empty", scores_path.display());
                Vec::new()
            };
            let corpus = match cfg.corpus {
                Some(_) => Some(load_filtered(&cfg)?),
                None => None,
            };
            let structure_scope = if include_statements { Scope::AllNonEmpty } else { Scope::QuestionsOnly };
            let metric_scope = if questions_only_metrics { Scope::QuestionsOnly } else { Scope::AllNonEmpty };

            let summary = summarize_run_scoped(&records, &scores, metric_scope)?;
            let mut qwords = question_word_table(&records, structure_scope);
            let mut lengths = length_flesch_table(&records, structure_scope);
            if let Some(c) = &corpus {
                qwords.extend(ground_truth_question_words(c));
                lengths.extend(ground_truth_length_flesch(c));
            }
            let qual: Vec<QualRow> = match annotations {
                Some(path) => {
                    let batch_path = batch.unwrap_or_else(|| cfg.out.join(BATCH_FILE));
                    let batch = EvaluationBatch::load(&batch_path)?;
                    let resolution = match resolution {
                        ResolutionArg::Pre => Resolution::PreDiscussion,
                        ResolutionArg::Post => Resolution::PostDiscussion,
                    };
                    aggregate_annotations(&read_annotations_csv(&path)?, &batch, resolution)?
                }
                None => Vec::new(),
            };
            let duplicates = duplicate_table(&records);

            let formats = g.format.map_or(Format::ALL.to_vec(), |f| vec![f]);
            for format in formats {
                let ext = format.extension();
                let outputs = [
                    ("summary", table(&summary, format)?),
                    ("qwords", table(&qwords, format)?),
                    ("length", table(&lengths, format)?),
                    ("qual", table(&qual, format)?),
                    ("duplicates", table(&duplicates, format)?),
                ];
                for (stem, text) in outputs {
                    let path = cfg.out.join(format!("report.{stem}.{ext}"));
                    write_file(&path, &text)?;
                    println!("{}", path.display());
                }
            }
            Ok(())
        }
        Command::Sample { corpus, per_source, iteration } => {
            let cfg = base_config(g, corpus)?;
            let corpus = load_filtered(&cfg)?;
            let records = load_records(cfg.out.join(RECORDS_FILE))?;
            let mut spec = SampleSpec { iteration, ..SampleSpec::default() };
            if let Some(q) = per_source {
                spec.videos_per_source = q;
            }
            let batch = sample_batch(&records, &corpus, &spec, cfg.seed)?;
            let path = cfg.out.join(BATCH_FILE);
            let json = serde_json::to_string_pretty(&batch).expect("batch serializes") + "\n";
            write_file(&path, &json)?;
            println!("{}: {} items from {} videos", path.display(), batch.items.len(), batch.videos.len());
            Ok(())
        }
        Command::Serve { batch, annotations, bind, cors_origins, excerpt_sentences } => {
            let cfg = base_config(g, None)?;
            let service = vidqg_annosvc::ServiceConfig {
                bind,
                cors_origins,
                excerpt_sentences,
                ..vidqg_annosvc::ServiceConfig::new(
                    batch.unwrap_or_else(|| cfg.out.join(BATCH_FILE)),
                    annotations.unwrap_or_else(|| cfg.out.join(ANNOTATIONS_FILE)),
                )
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Domain(e.to_string()))?;
            eprintln!("serving on http://{}", service.bind);
            runtime.block_on(vidqg_annosvc::serve(service))?;
            Ok(())
        }
        Command::Agreement { annotations, bloom_level } => {
            let cfg = base_config(g, None)?;
            let path = annotations.unwrap_or_else(|| cfg.out.join(ANNOTATIONS_FILE));
            let records = read_annotations_csv(&path)?;
            let level = match bloom_level {
                LevelArg::Nominal => MetricLevel::Nominal,
                LevelArg::Ordinal => MetricLevel::Ordinal,
            };
            let report = agreement_report(&records, level);
            match g.format {
                None | Some(Format::Json) => {
                    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                }
                Some(format) => print!("{}", table(&agreement_rows(&records, &report), format)?),
            }
            Ok(())
        }
    }
}

fn load_split(path: &Path) -> CliResult<SplitAssignment> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn make_backend(b: BackendConfig, timeout: Duration) -> CliResult<Arc<dyn GenerationBackend>> {
    match b.url {
        Some(url) => Ok(Arc::new(HttpBackend::new(b.profile, &url, timeout))),
        None if b.profile.name == MOCK_BACKEND => Ok(Arc::new(MockBackend::templated(b.profile))),
        None => Err(CliError::usage(format!("backend {:?} has no URL", b.profile.name))),
    }
}

fn make_provider(cfg: &RunConfig) -> Box<dyn EmbeddingProvider> {
    if cfg.provider == "local" {
        Box::new(LocalEmbedder::default())
    } else {
        Box::new(HttpEmbedder::new(HttpEmbedderConfig {
            retry: cfg.retry,
            timeout: Duration::from_secs(cfg.timeout_seconds),
            ..HttpEmbedderConfig::new(cfg.provider.clone())
        }))
    }
}

#[derive(Debug)]
struct StatsRow {
    source: String,
    stats: SourceStats,
}

impl StatsRow {
    fn new(source: String, stats: &SourceStats) -> Self {
        Self { source, stats: stats.clone() }
    }
}

impl TableRow for StatsRow {
    const COLUMNS: &'static [&'static str] =
        &["source", "videos", "questions", "avg_questions", "min_duration", "avg_duration", "max_duration"];

    fn cells(&self) -> Vec<Cell> {
        let s = &self.stats;
        vec![
            Cell::Text(self.source.clone()),
            Cell::Int(s.videos),
            Cell::Int(s.questions),
            Cell::Num(s.avg_questions),
            Cell::Text(format_hms(s.min_duration)),
            Cell::Text(format_hms(s.avg_duration)),
            Cell::Text(format_hms(s.max_duration)),
        ]
    }
}

struct SplitRow {
    subset: String,
    source: String,
    videos: usize,
    questions: usize,
}

impl TableRow for SplitRow {
    const COLUMNS: &'static [&'static str] = &["subset", "source", "videos", "questions"];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.subset.clone()),
            Cell::Text(self.source.clone()),
            Cell::Int(self.videos),
            Cell::Int(self.questions),
        ]
    }
}

struct AgreementRow {
    dimension: &'static str,
    items: usize,
    alpha: Option<AlphaOutcome>,
}

impl TableRow for AgreementRow {
    const COLUMNS: &'static [&'static str] = &["dimension", "items", "alpha"];

    fn cells(&self) -> Vec<Cell> {
        let alpha = match self.alpha {
            Some(AlphaOutcome::Value(v)) => Cell::Num(v),
            Some(AlphaOutcome::Degenerate) => Cell::Text("degenerate".into()),
            None => Cell::Missing,
        };
        vec![Cell::Text(self.dimension.into()), Cell::Int(self.items), alpha]
    }
}

fn agreement_rows(
    records: &[vidqg_core::agreement::AnnotationRecord],
    report: &AgreementReport,
) -> Vec<AgreementRow> {
    let dims = [
        ("relevance", Dimension::Relevance, report.relevance),
        ("answerability", Dimension::Answerability, report.answerability),
        ("bloom", Dimension::Bloom, report.bloom),
    ];
    dims.into_iter()
        .map(|(name, dim, alpha)| {
            AgreementRow { dimension: name, items: rating_matrix(records, dim).items.len(), alpha }
        })
        .collect()
}
