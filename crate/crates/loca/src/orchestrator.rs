//! The augment-and-review loop.
//!
//! `solve` drives one session: interpret (optional), generate the initial
//! chain, then iterate review / summarize / refine until the review passes
//! or the iteration budget runs out. Every artifact is persisted into the
//! session directory as it is produced, so a crashed or interrupted session
//! can be resumed and a finished one audited or replayed.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmenter::{Augmenter, ProblemContext};
use crate::chain::{
    chain_from_canonical, chain_to_canonical, problem_from_document, problem_to_document,
    Attachment, FeedbackSummary, LogicalChain, RawProblem, ReviewMode, ReviewReport,
    StructuredProblem,
};
use crate::config::{ConfigError, EngineConfig, ReviewPromptStyle, Stage, CONFIG_FORMAT};
use crate::interpreter;
use crate::prompts::{self, TemplateStore};
use crate::provider::Provider;
use crate::reviewer::{summarize_feedback, Reviewer, SummarizerBackend};
use crate::session::{
    report_from_document, report_to_document, summary_from_document, summary_to_document, Clock,
    ExchangeLog, ExchangeRecord, LogicalClock, SessionPaths, SystemClock, TracingProvider,
};

/// One loop round: the chain that was reviewed, the review's outcome, and
/// the summary handed to the refiner (absent when the loop stopped here).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u32,
    pub chain: LogicalChain,
    pub report: ReviewReport,
    pub summary: Option<FeedbackSummary>,
}

/// The complete record of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub problem_id: String,
    pub config_snapshot: String,
    pub interpretation: Option<StructuredProblem>,
    pub exchanges: Vec<ExchangeRecord>,
    pub iterations: Vec<IterationRecord>,
}

/// What a session produced: the last chain, whether the final review passed,
/// and the full trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub final_chain: LogicalChain,
    pub converged: bool,
    pub iterations_used: u32,
    pub trace: SessionTrace,
}

impl SessionOutcome {
    /// The feedback left unresolved when the budget ran out; empty for
    /// converged sessions.
    pub fn unresolved_feedback(&self) -> &[String] {
        match self.trace.iterations.last() {
            Some(last) if !self.converged => &last.report.feedback_set,
            _ => &[],
        }
    }
}

/// Result slot of one manifest entry.
#[derive(Debug)]
pub struct ManifestOutcome {
    pub problem_id: String,
    pub result: Result<SessionOutcome, EngineError>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("stage {stage} failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: u32,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("duplicate problem id `{0}` in manifest")]
    DuplicateProblemId(String),
    #[error("corrupt trace record {record}: {message}")]
    CorruptTrace { record: String, message: String },
    #[error("i/o failure at {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn stage_err(
    stage: &'static str,
    iteration: u32,
    source: impl std::error::Error + Send + Sync + 'static,
) -> EngineError {
    EngineError::Stage {
        stage,
        iteration,
        source: Box::new(source),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), EngineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<String, EngineError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Engine config snapshot persisted into each session directory, including
/// the template ids the run resolved.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionConfigDoc {
    version: String,
    template_ids: Vec<String>,
    engine: EngineConfig,
}

/// The template ids a config puts in play, recorded in the trace.
fn template_ids(config: &EngineConfig) -> Vec<String> {
    let mut ids = Vec::new();
    if config.interpretation {
        ids.push(prompts::INTERPRET.to_string());
        ids.push(prompts::INTERPRET_REPAIR.to_string());
    }
    match config.augment_mode {
        crate::config::AugmentMode::Structured => {
            ids.push(prompts::AUGMENT_STRUCTURED.to_string());
            ids.push(prompts::AUGMENT_REPAIR.to_string());
            ids.push(prompts::REFINE_STRUCTURED.to_string());
        }
        crate::config::AugmentMode::Generic => {
            ids.push(prompts::AUGMENT_GENERIC.to_string());
            ids.push(prompts::REFINE_GENERIC.to_string());
        }
    }
    let review_pair = match (config.review_mode, config.review_prompt_style) {
        (ReviewMode::Atomic, ReviewPromptStyle::Structured) => {
            [prompts::REVIEW_PRINCIPLE, prompts::REVIEW_DERIVATION]
        }
        (ReviewMode::Atomic, ReviewPromptStyle::Plain) => {
            [prompts::REVIEW_PRINCIPLE_PLAIN, prompts::REVIEW_DERIVATION_PLAIN]
        }
        (ReviewMode::Holistic, ReviewPromptStyle::Structured) => [
            prompts::REVIEW_HOLISTIC_PRINCIPLE,
            prompts::REVIEW_HOLISTIC_DERIVATION,
        ],
        (ReviewMode::Holistic, ReviewPromptStyle::Plain) => [
            prompts::REVIEW_HOLISTIC_PRINCIPLE_PLAIN,
            prompts::REVIEW_HOLISTIC_DERIVATION_PLAIN,
        ],
    };
    ids.extend(review_pair.iter().map(ToString::to_string));
    ids.push(prompts::VERDICT_REPAIR.to_string());
    if !config.offline_summarizer {
        ids.push(prompts::SUMMARIZE.to_string());
    }
    ids
}

fn load_templates(config: &EngineConfig) -> Result<TemplateStore, EngineError> {
    match &config.templates_dir {
        Some(dir) => TemplateStore::with_overrides(dir).map_err(|e| stage_err("config", 0, e)),
        None => Ok(TemplateStore::builtin()),
    }
}

fn make_clock(config: &EngineConfig) -> Box<dyn Clock> {
    if config.deterministic_timestamps {
        Box::new(LogicalClock::default())
    } else {
        Box::new(SystemClock)
    }
}

struct SessionCtx<'a> {
    config: &'a EngineConfig,
    templates: TemplateStore,
    paths: SessionPaths,
    problem: RawProblem,
    structured: StructuredProblem,
}

impl SessionCtx<'_> {
    fn augmenter(&self) -> Augmenter<'_> {
        Augmenter {
            templates: &self.templates,
            params: self.config.stage_params(Stage::Augment),
            mode: self.config.augment_mode,
            repairs: self.config.augment_repairs,
            max_steps: self.config.max_chain_steps,
        }
    }

    fn reviewer(&self) -> Reviewer<'_> {
        Reviewer {
            templates: &self.templates,
            params: self.config.stage_params(Stage::Review),
            style: self.config.review_prompt_style,
        }
    }

    fn problem_context(&self) -> ProblemContext<'_> {
        ProblemContext {
            raw: &self.problem,
            structured: &self.structured,
        }
    }

    fn summarize(
        &self,
        report: &ReviewReport,
        provider: &dyn Provider,
        iteration: u32,
    ) -> Result<FeedbackSummary, EngineError> {
        let backend = if self.config.offline_summarizer {
            SummarizerBackend::Offline
        } else {
            SummarizerBackend::Provider(provider)
        };
        summarize_feedback(
            &report.wrong_feedback(),
            backend,
            &self.templates,
            &self.config.stage_params(Stage::Summarize),
        )
        .map_err(|e| stage_err("summarize", iteration, e))
    }

    fn review(
        &self,
        chain: &LogicalChain,
        provider: &dyn Provider,
        iteration: u32,
    ) -> Result<ReviewReport, EngineError> {
        let reviewer = self.reviewer();
        let result = match self.config.review_mode {
            ReviewMode::Atomic => reviewer.review_chain_atomic(chain, &self.structured, provider),
            ReviewMode::Holistic => {
                reviewer.review_chain_holistic(chain, &self.structured, provider)
            }
        };
        result.map_err(|e| stage_err("review", iteration, e))
    }

    /// Runs review / summarize / refine rounds starting at `iteration` with
    /// `chain` as the candidate, appending to `iterations`.
    fn run_loop(
        &self,
        provider: &dyn Provider,
        mut chain: LogicalChain,
        mut iteration: u32,
        mut iterations: Vec<IterationRecord>,
    ) -> Result<(LogicalChain, bool, u32, Vec<IterationRecord>), EngineError> {
        loop {
            write_file(&self.paths.chain(iteration), &chain_to_canonical(&chain))?;
            let report = self.review(&chain, provider, iteration)?;
            write_file(&self.paths.report(iteration), &report_to_document(&report))?;
            iterations.push(IterationRecord {
                iteration,
                chain: chain.clone(),
                report: report.clone(),
                summary: None,
            });
            if report.overall {
                return Ok((chain, true, iteration, iterations));
            }
            if iteration >= self.config.max_iterations {
                return Ok((chain, false, iteration, iterations));
            }
            let summary = self.summarize(&report, provider, iteration)?;
            write_file(&self.paths.summary(iteration), &summary_to_document(&summary))?;
            if let Some(last) = iterations.last_mut() {
                last.summary = Some(summary.clone());
            }
            chain = self
                .augmenter()
                .refine(&chain, &summary, &self.problem_context(), provider)
                .map_err(|e| stage_err("refine", iteration, e))?;
            iteration += 1;
        }
    }
}

fn persist_problem(paths: &SessionPaths, problem: &RawProblem) -> Result<(), EngineError> {
    let mut attachment_paths = Vec::new();
    for (i, attachment) in problem.attachments.iter().enumerate() {
        let name = format!("attachment-{i}");
        let path = paths.root.join(&name);
        std::fs::write(&path, &attachment.bytes).map_err(|e| io_err(&path, e))?;
        attachment_paths.push(name);
    }
    write_file(
        &paths.problem(),
        &problem_to_document(problem, &attachment_paths),
    )
}

/// Solves one problem, writing the full session into `session_dir`.
///
/// The pipeline is: interpret (when enabled), generate the initial chain,
/// then loop review / summarize / refine, stopping at the first passing
/// review or when `max_iterations` rounds have been reviewed. The outcome
/// carries the last chain either way; stage faults abort with the partial
/// trace already persisted.
pub fn solve(
    problem: &RawProblem,
    config: &EngineConfig,
    provider: &dyn Provider,
    session_dir: &Path,
) -> Result<SessionOutcome, EngineError> {
    config.validate()?;
    std::fs::create_dir_all(session_dir).map_err(|e| io_err(session_dir, e))?;
    let paths = SessionPaths::new(session_dir);
    let templates = load_templates(config)?;

    let snapshot = SessionConfigDoc {
        version: CONFIG_FORMAT.to_string(),
        template_ids: template_ids(config),
        engine: config.clone(),
    };
    let snapshot_toml = toml::to_string_pretty(&snapshot)
        .map_err(|e| EngineError::Config(ConfigError::Parse(e.to_string())))?;
    write_file(&paths.config(), &snapshot_toml)?;
    persist_problem(&paths, problem)?;

    let log = ExchangeLog::create(paths.exchanges(), make_clock(config))
        .map_err(|e| io_err(&paths.exchanges(), e))?;
    let traced = TracingProvider {
        inner: provider,
        log: &log,
    };

    let structured = if config.interpretation {
        let structured = interpreter::interpret(
            problem,
            &traced,
            &templates,
            &config.stage_params(Stage::Interpret),
            config.interpret_repairs,
        )
        .map_err(|e| stage_err("interpret", 0, e))?;
        write_file(
            &paths.interpretation(),
            &interpreter::structured_to_document(&structured),
        )?;
        structured
    } else {
        StructuredProblem::from_raw_statement(&problem.statement)
    };

    let ctx = SessionCtx {
        config,
        templates,
        paths,
        problem: problem.clone(),
        structured,
    };
    let initial = ctx
        .augmenter()
        .generate_initial(&ctx.problem_context(), &traced)
        .map_err(|e| stage_err("augment", 1, e))?;

    let (final_chain, converged, iterations_used, iterations) =
        ctx.run_loop(&traced, initial, 1, Vec::new())?;

    Ok(SessionOutcome {
        final_chain,
        converged,
        iterations_used,
        trace: SessionTrace {
            problem_id: problem.id.clone(),
            config_snapshot: snapshot_toml,
            interpretation: ctx.config.interpretation.then(|| ctx.structured.clone()),
            exchanges: log.records(),
            iterations,
        },
    })
}

/// Runs a batch of problems with at most `parallelism` concurrent sessions.
/// Outcomes come back in manifest order; one session's failure is recorded
/// in its slot without aborting the rest. Each session writes to
/// `out_dir/<problem id>`.
pub fn run_manifest(
    problems: &[RawProblem],
    config: &EngineConfig,
    provider: &dyn Provider,
    out_dir: &Path,
    parallelism: usize,
) -> Result<Vec<ManifestOutcome>, EngineError> {
    config.validate()?;
    let mut seen = std::collections::HashSet::new();
    for problem in problems {
        if !seen.insert(&problem.id) {
            return Err(EngineError::DuplicateProblemId(problem.id.clone()));
        }
    }
    let workers = parallelism.max(1).min(problems.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ManifestOutcome>>> =
        Mutex::new((0..problems.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= problems.len() {
                    break;
                }
                let problem = &problems[index];
                let session_dir = out_dir.join(&problem.id);
                let result = solve(problem, config, provider, &session_dir);
                let outcome = ManifestOutcome {
                    problem_id: problem.id.clone(),
                    result,
                };
                slots.lock().expect("manifest slots poisoned")[index] = Some(outcome);
            });
        }
    });

    Ok(slots
        .into_inner()
        .expect("manifest slots poisoned")
        .into_iter()
        .map(|slot| slot.expect("every manifest slot is filled"))
        .collect())
}

fn corrupt(record: impl Into<String>, message: impl std::fmt::Display) -> EngineError {
    EngineError::CorruptTrace {
        record: record.into(),
        message: message.to_string(),
    }
}

/// Everything read back from a session directory.
pub struct StoredSession {
    pub config: EngineConfig,
    pub template_ids: Vec<String>,
    pub config_snapshot: String,
    pub problem: RawProblem,
    pub interpretation: Option<StructuredProblem>,
    pub iterations: Vec<IterationRecord>,
    pub exchanges: Vec<ExchangeRecord>,
}

/// Reads and validates a session directory. Torn iteration records (a chain
/// without its report, or unparseable files) are corrupt-trace errors that
/// name the record.
pub fn load_session(session_dir: &Path) -> Result<StoredSession, EngineError> {
    let paths = SessionPaths::new(session_dir);
    if !paths.config().exists() {
        return Err(corrupt("config", "missing config snapshot"));
    }
    let config_snapshot = read_file(&paths.config())?;
    let doc: SessionConfigDoc = toml::from_str(&config_snapshot)
        .map_err(|e| corrupt("config", e))?;
    if doc.version != CONFIG_FORMAT {
        return Err(corrupt("config", format!("unsupported version {}", doc.version)));
    }
    doc.engine.validate()?;

    let problem_text = read_file(&paths.problem()).map_err(|_| corrupt("problem", "missing"))?;
    let (mut problem, attachment_refs) =
        problem_from_document(&problem_text).map_err(|e| corrupt("problem", e))?;
    for (name, media_type) in attachment_refs {
        let path = paths.root.join(&name);
        let bytes = std::fs::read(&path).map_err(|e| corrupt(name.clone(), e))?;
        problem.attachments.push(Attachment { media_type, bytes });
    }

    let interpretation = if doc.engine.interpretation {
        let text = read_file(&paths.interpretation())
            .map_err(|_| corrupt("interpretation", "missing"))?;
        Some(
            interpreter::structured_from_document(&text)
                .map_err(|e| corrupt("interpretation", e))?,
        )
    } else {
        None
    };

    let mut iterations = Vec::new();
    let mut n = 1u32;
    while paths.iter_dir(n).exists() {
        let record = |file: &str| format!("iter-{n}/{file}");
        let chain_text =
            read_file(&paths.chain(n)).map_err(|_| corrupt(record("chain"), "missing"))?;
        let chain = chain_from_canonical(&chain_text).map_err(|e| corrupt(record("chain"), e))?;
        let report_text =
            read_file(&paths.report(n)).map_err(|_| corrupt(record("report"), "missing"))?;
        let report =
            report_from_document(&report_text).map_err(|e| corrupt(record("report"), e))?;
        if report.mode == ReviewMode::Atomic && report.verdicts.len() != chain.len() {
            return Err(corrupt(
                record("report"),
                format!(
                    "atomic report has {} verdicts for a {}-step chain",
                    report.verdicts.len(),
                    chain.len()
                ),
            ));
        }
        let summary = if paths.summary(n).exists() {
            let text = read_file(&paths.summary(n))?;
            Some(summary_from_document(&text).map_err(|e| corrupt(record("summary"), e))?)
        } else {
            None
        };
        iterations.push(IterationRecord {
            iteration: n,
            chain,
            report,
            summary,
        });
        n += 1;
    }

    let exchanges_text = read_file(&paths.exchanges())
        .map_err(|_| corrupt("exchanges.log", "missing"))?;
    let exchanges = crate::session::parse_exchange_log(&exchanges_text)
        .map_err(|e| corrupt("exchanges.log", e))?;

    Ok(StoredSession {
        config: doc.engine,
        template_ids: doc.template_ids,
        config_snapshot,
        problem,
        interpretation,
        iterations,
        exchanges,
    })
}

/// Continues an interrupted session from its directory.
///
/// A session whose last stored review already passed (or whose budget is
/// already spent) returns the stored outcome without any provider call.
/// Otherwise the loop picks up exactly where it stopped, appending to the
/// same trace.
pub fn resume(session_dir: &Path, provider: &dyn Provider) -> Result<SessionOutcome, EngineError> {
    let stored = load_session(session_dir)?;
    let paths = SessionPaths::new(session_dir);
    let config = stored.config.clone();

    let outcome_from_stored = |stored: &StoredSession, converged: bool| -> SessionOutcome {
        let last = stored
            .iterations
            .last()
            .expect("outcome requires at least one iteration");
        SessionOutcome {
            final_chain: last.chain.clone(),
            converged,
            iterations_used: last.iteration,
            trace: SessionTrace {
                problem_id: stored.problem.id.clone(),
                config_snapshot: stored.config_snapshot.clone(),
                interpretation: stored.interpretation.clone(),
                exchanges: stored.exchanges.clone(),
                iterations: stored.iterations.clone(),
            },
        }
    };

    if let Some(last) = stored.iterations.last() {
        if last.report.overall {
            return Ok(outcome_from_stored(&stored, true));
        }
        if last.iteration >= config.max_iterations {
            return Ok(outcome_from_stored(&stored, false));
        }
    }

    let templates = load_templates(&config)?;
    let log = ExchangeLog::reopen(paths.exchanges(), make_clock(&config))
        .map_err(|e| corrupt("exchanges.log", e))?;
    let traced = TracingProvider {
        inner: provider,
        log: &log,
    };
    let structured = stored
        .interpretation
        .clone()
        .unwrap_or_else(|| StructuredProblem::from_raw_statement(&stored.problem.statement));
    let ctx = SessionCtx {
        config: &config,
        templates,
        paths,
        problem: stored.problem.clone(),
        structured,
    };

    let (chain, start_iteration, iterations) = match stored.iterations.last() {
        None => {
            // interpretation done (or disabled) but no chain yet
            let initial = ctx
                .augmenter()
                .generate_initial(&ctx.problem_context(), &traced)
                .map_err(|e| stage_err("augment", 1, e))?;
            (initial, 1, Vec::new())
        }
        Some(last) => {
            let iteration = last.iteration;
            let summary = match &last.summary {
                Some(summary) => summary.clone(),
                None => {
                    let summary = ctx.summarize(&last.report, &traced, iteration)?;
                    write_file(
                        &ctx.paths.summary(iteration),
                        &summary_to_document(&summary),
                    )?;
                    summary
                }
            };
            let mut iterations = stored.iterations.clone();
            if let Some(last) = iterations.last_mut() {
                last.summary = Some(summary.clone());
            }
            let refined = ctx
                .augmenter()
                .refine(&last.chain, &summary, &ctx.problem_context(), &traced)
                .map_err(|e| stage_err("refine", iteration, e))?;
            (refined, iteration + 1, iterations)
        }
    };

    let (final_chain, converged, iterations_used, iterations) =
        ctx.run_loop(&traced, chain, start_iteration, iterations)?;

    Ok(SessionOutcome {
        final_chain,
        converged,
        iterations_used,
        trace: SessionTrace {
            problem_id: stored.problem.id.clone(),
            config_snapshot: stored.config_snapshot,
            interpretation: stored.interpretation,
            exchanges: log.records(),
            iterations,
        },
    })
}
