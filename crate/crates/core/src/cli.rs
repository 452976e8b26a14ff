//! Command-line surface: `index`, `answer`, `eval qa|retrieval|economy|plan`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError, PipelineResult, DEFAULT_MAX_ITERATIONS, MAX_SUB_QUESTIONS};
use crate::corpus::{load_corpus, load_question_set, CorpusError, QuestionRecord, SourceFormat};
use crate::eval::{
    estimate_difficulty, evaluate_retrieval, judge, plan_accuracy, plan_rows, success_economy, summarize_qa,
    write_records_csv, EvalError, EvalRecord, JudgeMode, RetrievalEvalMode, DEFAULT_DIFFICULTY_SAMPLES,
    DEFAULT_DIFFICULTY_TEMPERATURE,
};
use crate::graph::{self, GraphError, GraphIndex, UnitKind, DEFAULT_TAU};
use crate::indexing::{build_index, IndexConfig, IndexError, DEFAULT_BATCH_SIZE};
use crate::llm::mock::{HeuristicChat, MockEmbedder, MockEmbedding, ScriptedChat};
use crate::llm::{ChatBackend, Gateway, LlmError};
use crate::llm::{HttpChat, HttpConfig, HttpEmbedder};
use crate::llm::{LedgerEntry, TokenLedger};
use crate::retrieval::{RetrievalConfig, RetrievalError, RetrievalMode, Weighting};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

pub const INDEXING_TOKENS_FILE: &str = "indexing_tokens.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Llm(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Llm(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Llm(e) => e.into(),
            AgentError::Retrieval(e) => e.into(),
            AgentError::EmptyQuestion => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Llm(e) => e.into(),
            EvalError::Retrieval(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_data(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Rule-based offline responder.
    Mock,
    /// Replies replayed from `script`.
    Scripted,
    /// Chat-completions compatible server from `GRASP_API_*` env vars.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// A JSON array of replies, or any other file as one reply.
    pub script: Option<PathBuf>,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    pub mock_embedding: MockEmbedding,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            script: None,
            chat_model: "mock".into(),
            embedding_model: "mock".into(),
            embedding_dim: 64,
            mock_embedding: MockEmbedding::BagOfWords,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSettings {
    pub batch_size: usize,
    pub unit_kind: UnitKind,
    pub tau: f64,
    pub embed_passages: bool,
}

impl Default for IndexSettings {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            unit_kind: UnitKind::Proposition,
            tau: DEFAULT_TAU,
            embed_passages: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub max_iterations: usize,
    pub max_sub_questions: usize,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self { max_iterations: DEFAULT_MAX_ITERATIONS, max_sub_questions: MAX_SUB_QUESTIONS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub judge: bool,
    pub difficulty_samples: usize,
    pub difficulty_temperature: f64,
    /// Passages per retrieval query.
    pub k: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            judge: false,
            difficulty_samples: DEFAULT_DIFFICULTY_SAMPLES,
            difficulty_temperature: DEFAULT_DIFFICULTY_TEMPERATURE,
            k: 5,
        }
    }
}

/// Everything a run needs. Precedence: flags, then the config file, then
/// these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub corpus_format: SourceFormat,
    pub questions: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub traces_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub indexing: IndexSettings,
    pub retrieval: RetrievalConfig,
    pub agent: AgentSettings,
    pub eval: EvalSettings,
    /// Concurrent questions in `answer`.
    pub workers: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            corpus_format: SourceFormat::RetrievalSplit,
            questions: None,
            index_dir: None,
            traces_dir: None,
            out_dir: None,
            backend: BackendConfig::default(),
            indexing: IndexSettings::default(),
            retrieval: RetrievalConfig::default(),
            agent: AgentSettings::default(),
            eval: EvalSettings::default(),
            workers: 1,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Read a config file; relative paths in it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.corpus,
            &mut cfg.questions,
            &mut cfg.index_dir,
            &mut cfg.traces_dir,
            &mut cfg.out_dir,
            &mut cfg.backend.script,
        ] {
            if let Some(v) = p.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(cfg)
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            retrieval: self.retrieval,
            max_iterations: self.agent.max_iterations,
            max_sub_questions: self.agent.max_sub_questions,
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            batch_size: self.indexing.batch_size,
            unit_kind: self.indexing.unit_kind,
            embed_passages: self.indexing.embed_passages,
            tau: self.indexing.tau,
            lambda: self.retrieval.lambda,
            chat_model: self.backend.chat_model.clone(),
            embedding_model: self.backend.embedding_model.clone(),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.retrieval.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.agent.max_iterations == 0 || self.agent.max_sub_questions == 0 {
            return Err(CliError::Usage("max_iterations and max_sub_questions must be at least 1".into()));
        }
        if self.indexing.batch_size == 0 || self.backend.embedding_dim == 0 || self.workers == 0 {
            return Err(CliError::Usage("batch_size, embedding_dim and workers must be at least 1".into()));
        }
        Ok(())
    }
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// JSON run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// retrieval_split or longbench.
    #[arg(long, global = true, value_parser = serde_enum::<SourceFormat>)]
    pub corpus_format: Option<SourceFormat>,
    #[arg(long, global = true)]
    pub questions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub index_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub traces_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// mock, scripted or http.
    #[arg(long, global = true, value_parser = serde_enum::<BackendKind>)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub chat_model: Option<String>,
    #[arg(long, global = true)]
    pub embedding_model: Option<String>,
    #[arg(long, global = true)]
    pub embedding_dim: Option<usize>,
    /// hashed or bag_of_words.
    #[arg(long, global = true, value_parser = serde_enum::<MockEmbedding>)]
    pub mock_embedding: Option<MockEmbedding>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    /// proposition or sentence.
    #[arg(long, global = true, value_parser = serde_enum::<UnitKind>)]
    pub unit_kind: Option<UnitKind>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub k_entities: Option<usize>,
    #[arg(long, global = true)]
    pub d_passages: Option<usize>,
    /// rankvote or uniform.
    #[arg(long, global = true, value_parser = serde_enum::<Weighting>)]
    pub weighting: Option<Weighting>,
    /// full, dpr_bypass or no_entity_selection.
    #[arg(long, global = true, value_parser = serde_enum::<RetrievalMode>)]
    pub mode: Option<RetrievalMode>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub max_sub_questions: Option<usize>,
    #[arg(long, global = true)]
    pub judge: Option<bool>,
    #[arg(long, global = true)]
    pub difficulty_samples: Option<usize>,
    #[arg(long, global = true)]
    pub difficulty_temperature: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl Overrides {
    /// Resolve flags over the config file over defaults.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        set! {
            corpus => corpus, questions => questions, index_dir => index_dir, traces_dir => traces_dir,
            out_dir => out_dir, script => backend.script,
        }
        set! {
            corpus_format => corpus_format, backend => backend.kind, chat_model => backend.chat_model,
            embedding_model => backend.embedding_model, embedding_dim => backend.embedding_dim,
            mock_embedding => backend.mock_embedding, max_in_flight => backend.max_in_flight,
            batch_size => indexing.batch_size, unit_kind => indexing.unit_kind, tau => indexing.tau,
            lambda => retrieval.lambda, m => retrieval.m, k_entities => retrieval.k_entities,
            d_passages => retrieval.d_passages, weighting => retrieval.weighting, mode => retrieval.mode,
            max_iterations => agent.max_iterations, max_sub_questions => agent.max_sub_questions,
            judge => eval.judge, difficulty_samples => eval.difficulty_samples,
            difficulty_temperature => eval.difficulty_temperature, k => eval.k, workers => workers, seed => seed,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Parser)]
#[command(name = "grasp", version, about = "Agentic multi-hop question answering over a proposition graph")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and persist an index over the corpus.
    Index {
        /// Replace an existing index directory.
        #[arg(long)]
        force: bool,
    },
    /// Answer one question or a question set, writing one trace per question.
    Answer {
        #[arg(long)]
        question: Option<String>,
        #[arg(long, default_value = "q0")]
        question_id: String,
    },
    /// Score traces or retrieval.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// EM, F1 and (optionally) judge verdicts over traces.
    Qa,
    /// Passage recall in single-pass and simulated-agentic modes.
    Retrieval {
        /// single_pass, simulated_agentic, or both when omitted.
        #[arg(long = "retrieval-mode", value_parser = serde_enum::<RetrievalEvalMode>)]
        retrieval_mode: Option<RetrievalEvalMode>,
    },
    /// Difficulty sampling and tokens per weighted correct answer.
    Economy,
    /// Planner hop accuracy.
    Plan,
}

/// Parse `args` and run, writing to `out` and `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (or `{}` in the config)", name.replace('-', "_"))))
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = cli.overrides.resolve()?;
    let _ = writeln!(out, "resolved config:\n{}", serde_json::to_string_pretty(&config).expect("config serializes"));
    match &cli.command {
        Command::Index { force } => cmd_index(&config, *force, out),
        Command::Answer { question, question_id } => cmd_answer(&config, question.as_deref(), question_id, out, err),
        Command::Eval { what } => match what {
            EvalCommand::Qa => cmd_eval_qa(&config, out, err),
            EvalCommand::Retrieval { retrieval_mode } => cmd_eval_retrieval(&config, *retrieval_mode, out),
            EvalCommand::Economy => cmd_eval_economy(&config, out, err),
            EvalCommand::Plan => cmd_eval_plan(&config, out, err),
        },
    }
}

/// Gateway for the configured backend.
pub fn build_gateway(config: &RunConfig) -> Result<Gateway, CliError> {
    let b = &config.backend;
    let embedder = || MockEmbedder::new(b.embedding_dim, config.seed, b.mock_embedding);
    let gw = match b.kind {
        BackendKind::Mock => Gateway::new(HeuristicChat, embedder()),
        BackendKind::Scripted => {
            let path = require(&b.script, "script")?;
            let chat = load_script(path)?;
            Gateway::new(chat, embedder())
        }
        BackendKind::Http => {
            let http = HttpConfig::from_env().ok_or_else(|| {
                CliError::Usage("the http backend needs GRASP_API_BASE (and usually GRASP_API_KEY)".into())
            })?;
            let chat: Box<dyn ChatBackend> = Box::new(HttpChat::new(http.clone(), &b.chat_model));
            Gateway::from_boxed(chat, Box::new(HttpEmbedder::new(http, &b.embedding_model, b.embedding_dim)))
        }
    };
    Ok(gw.with_max_in_flight(b.max_in_flight.max(1)))
}

fn load_script(path: &Path) -> Result<ScriptedChat, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        ScriptedChat::from_json_file(path).map_err(CliError::Data)
    } else {
        let text = fs::read_to_string(path).map_err(io_data(path))?;
        Ok(ScriptedChat::new([text]))
    }
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(io_data(&tmp))?;
    fs::rename(&tmp, path).map_err(io_data(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn cmd_index(config: &RunConfig, force: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus_path = require(&config.corpus, "corpus")?;
    let dir = require(&config.index_dir, "index-dir")?;
    if dir.exists() && fs::read_dir(dir).map_err(io_data(dir))?.next().is_some() {
        if !force {
            return Err(CliError::Data(format!("index exists at {}; pass --force to replace it", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(io_data(dir))?;
    }
    let corpus = load_corpus(corpus_path, config.corpus_format)?;
    let gw = build_gateway(config)?;
    let (index, report) = build_index(&corpus.passages, &gw, &config.index_config())?;
    let manifest = graph::persist(&index, dir)?;
    write_json(&dir.join(INDEXING_TOKENS_FILE), &report)?;
    let _ = writeln!(
        out,
        "indexed {} passages: {} propositions, {} entities ({} merged), {} extraction calls, {} indexing tokens",
        manifest.passage_count,
        manifest.proposition_count,
        manifest.entity_count,
        report.summary.merged_entities,
        report.extraction_calls,
        report.indexing_tokens
    );
    for f in &report.failed {
        let _ = writeln!(out, "extraction failed for {}: {}", f.passage_id, f.reason);
    }
    for f in &report.flagged {
        let _ = writeln!(out, "extraction flagged {}: {}", f.passage_id, f.reason);
    }
    Ok(())
}

fn load_index(config: &RunConfig) -> Result<GraphIndex, CliError> {
    let dir = require(&config.index_dir, "index-dir")?;
    Ok(graph::load(dir)?)
}

fn trace_file_name(question_id: &str) -> String {
    let safe: String =
        question_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    format!("{safe}.json")
}

fn cmd_answer(
    config: &RunConfig,
    question: Option<&str>,
    question_id: &str,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let questions: Vec<(String, String)> = match (question, &config.questions) {
        (Some(q), _) => {
            if q.trim().is_empty() {
                return Err(CliError::Usage("question text is empty".into()));
            }
            vec![(question_id.to_string(), q.to_string())]
        }
        (None, Some(path)) => {
            load_question_set(path, config.corpus_format)?.into_iter().map(|r| (r.question_id, r.question)).collect()
        }
        (None, None) => return Err(CliError::Usage("give --question or a --questions file".into())),
    };
    let traces_dir = require(&config.traces_dir, "traces-dir")?;
    let index = load_index(config)?;
    let gw = build_gateway(config)?;
    fs::create_dir_all(traces_dir).map_err(io_data(traces_dir))?;

    let mut workers = config.workers.min(questions.len()).max(1);
    if config.backend.kind == BackendKind::Scripted && workers > 1 {
        let _ = writeln!(err, "warning: scripted replies are consumed in order; running with 1 worker");
        workers = 1;
    }
    let agent = Agent::new(&index, &gw, config.agent_config());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<PipelineResult, CliError>>>> =
        Mutex::new((0..questions.len()).map(|_| None).collect());
    let started = Instant::now();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((qid, q)) = questions.get(i) else { break };
                let r = agent.answer_question(qid, q).map_err(CliError::from).and_then(|res| {
                    write_atomic(&traces_dir.join(trace_file_name(qid)), res.to_json().as_bytes())?;
                    Ok(res)
                });
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });
    let mut first_error = None;
    let (mut calls, mut tokens, mut answered) = (0, 0, 0);
    for (slot, (qid, _)) in results.into_inner().expect("results poisoned").into_iter().zip(&questions) {
        match slot.expect("every question processed") {
            Ok(res) => {
                answered += 1;
                calls += res.tokens.calls;
                tokens += res.tokens.total_tokens;
                let _ = writeln!(out, "{qid}\t{}", res.final_answer);
                for f in res.flags.iter().chain(res.failure.iter()) {
                    let _ = writeln!(err, "{qid}: {f}");
                }
            }
            Err(e) => {
                let _ = writeln!(err, "{qid}: error: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    let _ = writeln!(out, "answered {answered} of {} question(s): {calls} LLM calls, {tokens} tokens", questions.len());
    let _ = writeln!(err, "elapsed {:.2}s", started.elapsed().as_secs_f64());
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Read every `*.json` trace in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<PipelineResult>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_data(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_data(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}

struct Matched {
    pairs: Vec<(PipelineResult, QuestionRecord)>,
    excluded: Vec<String>,
}

fn match_traces(config: &RunConfig) -> Result<Matched, CliError> {
    let traces = load_traces(require(&config.traces_dir, "traces-dir")?)?;
    let golds = load_question_set(require(&config.questions, "questions")?, config.corpus_format)?;
    let mut by_id: BTreeMap<String, QuestionRecord> = golds.into_iter().map(|g| (g.question_id.clone(), g)).collect();
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for t in traces {
        match by_id.remove(&t.question_id) {
            Some(g) => pairs.push((t, g)),
            None => excluded.push(format!("trace without gold: {}", t.question_id)),
        }
    }
    excluded.extend(by_id.into_keys().map(|q| format!("gold without trace: {q}")));
    Ok(Matched { pairs, excluded })
}

fn report_excluded(excluded: &[String], err: &mut dyn Write) {
    for e in excluded {
        let _ = writeln!(err, "warning: excluded {e}");
    }
    if !excluded.is_empty() {
        let _ = writeln!(err, "warning: {} id mismatch(es) excluded", excluded.len());
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = match (&config.out_dir, &config.traces_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(t)) => t.join("eval"),
        (None, None) => return Err(CliError::Usage("missing --out-dir".into())),
    };
    fs::create_dir_all(&dir).map_err(io_data(&dir))?;
    Ok(dir)
}

fn cmd_eval_qa(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let matched = match_traces(config)?;
    let mut records: Vec<EvalRecord> = matched.pairs.iter().map(|(t, g)| EvalRecord::from_trace(t, g)).collect();
    if config.eval.judge {
        let gw = build_gateway(config)?;
        for (r, (t, g)) in records.iter_mut().zip(&matched.pairs) {
            r.judge_lr1 =
                Some(judge(&gw, &g.question_id, &g.question, &t.final_answer, &g.gold_answers, JudgeMode::Lr1)?);
            r.judge_lr2 =
                Some(judge(&gw, &g.question_id, &g.question, &t.final_answer, &g.gold_answers, JudgeMode::Lr2)?);
        }
    }
    let summary = summarize_qa(&records, matched.excluded.clone());
    let dir = out_dir(config)?;
    write_json(&dir.join("qa_summary.json"), &summary)?;
    let mut csv = Vec::new();
    write_records_csv(&records, &mut csv)?;
    write_atomic(&dir.join("qa_records.csv"), &csv)?;
    for r in &records {
        let _ = writeln!(out, "{}\tem={}\tf1={:.4}\t{}", r.question_id, r.em, r.f1, r.prediction);
    }
    let _ = writeln!(
        out,
        "questions={} em={:.4} f1={:.4} tokens={}",
        summary.questions, summary.em, summary.f1, summary.total_tokens
    );
    for (name, j) in [("lr1", summary.judge_lr1), ("lr2", summary.judge_lr2)] {
        if let Some(j) = j {
            let _ = writeln!(
                out,
                "judge_{name}: yes={:.4} yes_or_partial={:.4} unparsed={}",
                j.yes_rate, j.yes_or_partial_rate, j.unparsed
            );
        }
    }
    report_excluded(&matched.excluded, err);
    Ok(())
}

fn cmd_eval_retrieval(
    config: &RunConfig,
    mode: Option<RetrievalEvalMode>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let index = load_index(config)?;
    let questions = load_question_set(require(&config.questions, "questions")?, config.corpus_format)?;
    let gw = build_gateway(config)?;
    let dir = match &config.out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(io_data(d))?;
            Some(d.clone())
        }
        None => None,
    };
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![RetrievalEvalMode::SinglePass, RetrievalEvalMode::SimulatedAgentic],
    };
    for m in modes {
        let report = evaluate_retrieval(&index, &gw, &questions, m, config.eval.k, &config.retrieval)?;
        let name = serde_json::to_value(m).expect("mode serializes").as_str().unwrap_or_default().to_string();
        for r in &report.rows {
            let _ = writeln!(out, "{name}\t{}\trecall@{}={:.4}", r.question_id, report.k, r.recall);
        }
        let _ = writeln!(
            out,
            "{name}: mean recall@{} = {:.4} over {} question(s), {} skipped",
            report.k,
            report.mean_recall,
            report.rows.len(),
            report.skipped.len()
        );
        if let Some(d) = &dir {
            write_json(&d.join(format!("retrieval_{name}.json")), &report)?;
        }
    }
    Ok(())
}

/// Per-question `T_i` from trace calls, with indexing tokens (if the index
/// directory holds a build report) amortized evenly.
fn question_tokens(config: &RunConfig, traces: &[&PipelineResult], err: &mut dyn Write) -> Result<Vec<u64>, CliError> {
    let ledger = TokenLedger::default();
    if let Some(dir) = &config.index_dir {
        let path = dir.join(INDEXING_TOKENS_FILE);
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(io_data(&path))?;
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            ledger.record_prior_indexing(v["indexing_tokens"].as_u64().unwrap_or(0));
        } else {
            let _ = writeln!(err, "warning: {} not found; indexing tokens not amortized", path.display());
        }
    }
    for t in traces {
        for c in &t.calls {
            ledger.append(LedgerEntry {
                call_id: c.call_id.clone(),
                stage: c.stage,
                question_id: t.question_id.clone(),
                input_tokens: c.input_tokens,
                output_tokens: c.output_tokens,
            });
        }
    }
    let ids: Vec<String> = traces.iter().map(|t| t.question_id.clone()).collect();
    Ok(ledger.report(&ids).questions.iter().map(|q| q.total.rounded()).collect())
}

fn cmd_eval_economy(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let matched = match_traces(config)?;
    let traces: Vec<&PipelineResult> = matched.pairs.iter().map(|(t, _)| t).collect();
    let tokens = question_tokens(config, &traces, err)?;
    let gw = build_gateway(config)?;
    let mut records = Vec::new();
    let mut difficulties = Vec::new();
    for ((t, g), tok) in matched.pairs.iter().zip(tokens) {
        let mut r = EvalRecord::from_trace(t, g);
        r.tokens = tok;
        let d = estimate_difficulty(
            &gw,
            &g.question_id,
            &g.question,
            &g.gold_answers,
            config.eval.difficulty_samples,
            config.eval.difficulty_temperature,
        )?;
        r.difficulty = Some(d.r);
        difficulties.push(d);
        records.push(r);
    }
    let report = success_economy(&records)?;
    let dir = out_dir(config)?;
    write_json(&dir.join("economy.json"), &serde_json::json!({ "report": report, "difficulty": difficulties }))?;
    let mut csv = Vec::new();
    write_records_csv(&records, &mut csv)?;
    write_atomic(&dir.join("economy_records.csv"), &csv)?;
    for row in &report.questions {
        let _ = writeln!(
            out,
            "{}\tem={}\ttokens={}\tr={:.4}\tw={:.4}",
            row.question_id,
            row.em,
            row.tokens,
            row.r.unwrap_or(f64::NAN),
            row.w.unwrap_or(f64::NAN)
        );
    }
    match report.c_w {
        Some(c) => {
            let _ = writeln!(
                out,
                "C_w = {c:.2} (total tokens {}, weighted correct {:.4})",
                report.total_tokens, report.weighted_correct
            );
        }
        None => {
            let _ = writeln!(out, "C_w undefined: no exactly-correct answers (total tokens {})", report.total_tokens);
        }
    }
    report_excluded(&matched.excluded, err);
    Ok(())
}

fn cmd_eval_plan(config: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let matched = match_traces(config)?;
    let records: Vec<EvalRecord> = matched.pairs.iter().map(|(t, g)| EvalRecord::from_trace(t, g)).collect();
    let rows = plan_rows(&records);
    let skipped: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.planned_steps.is_none() || r.hop_count.is_none())
        .map(|r| r.question_id.as_str())
        .collect();
    let report = plan_accuracy(&rows);
    let dir = out_dir(config)?;
    write_json(&dir.join("plan_accuracy.json"), &report)?;
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let _ = writeln!(out, "hops\tn\tplan_acc\tavg_dev\tem_match\tem_no_match");
    for (hop, s) in report
        .per_hop
        .iter()
        .map(|(h, s)| (h.to_string(), s))
        .chain(report.overall.iter().map(|s| ("all".to_string(), s)))
    {
        let _ = writeln!(
            out,
            "{hop}\t{}\t{:.4}\t{:+.4}\t{}\t{}",
            s.questions,
            s.plan_accuracy,
            s.avg_deviation,
            fmt(s.em_match),
            fmt(s.em_no_match)
        );
    }
    if !skipped.is_empty() {
        let _ = writeln!(err, "warning: {} question(s) without a plan or hop count skipped", skipped.len());
    }
    report_excluded(&matched.excluded, err);
    Ok(())
}
