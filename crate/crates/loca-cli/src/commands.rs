//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;

use loca::chain::{LogicalChain, ReviewMode};
use loca::config::{AugmentMode, ConfigFile, ProviderMode, ReviewPromptStyle};
use loca::orchestrator::{self, load_session, ManifestOutcome, StoredSession};
use loca::scoring::{self, MarkSheet, NamedCard, Rubric};

use crate::provider_setup::{build_provider, load_problem};
use crate::{
    AblateArgs, AugmentModeArg, EngineFlags, OnOff, ProviderArg, ReplayArgs, ResumeArgs,
    ReviewModeArg, ScoreArgs, SolveArgs,
};

/// Loads the config file (or defaults) and applies the command line
/// overrides on top.
fn effective_config(flags: &EngineFlags) -> Result<ConfigFile, String> {
    let mut config = match &flags.config {
        Some(path) => ConfigFile::load(path).map_err(|e| e.to_string())?,
        None => ConfigFile::default(),
    };
    if let Some(n) = flags.max_iterations {
        config.engine.max_iterations = n;
    }
    if let Some(mode) = flags.review_mode {
        config.engine.review_mode = match mode {
            ReviewModeArg::Atomic => ReviewMode::Atomic,
            ReviewModeArg::Holistic => ReviewMode::Holistic,
        };
    }
    if let Some(mode) = flags.augment_mode {
        config.engine.augment_mode = match mode {
            AugmentModeArg::Structured => AugmentMode::Structured,
            AugmentModeArg::Generic => AugmentMode::Generic,
        };
    }
    if let Some(setting) = flags.interpretation {
        config.engine.interpretation = matches!(setting, OnOff::On);
    }
    if let Some(provider) = flags.provider {
        config.provider.mode = match provider {
            ProviderArg::Live => ProviderMode::Live,
            ProviderArg::Replay => ProviderMode::Replay,
            ProviderArg::Mock => ProviderMode::Mock,
        };
    }
    if let Some(cassette) = &flags.cassette {
        config.provider.cassette = Some(cassette.clone());
    }
    // Deterministic runs are only comparable with deterministic timestamps;
    // scripted and replayed sessions always use the logical clock.
    if config.provider.mode != ProviderMode::Live {
        config.engine.deterministic_timestamps = true;
    }
    config.engine.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn describe_outcome(outcome: &ManifestOutcome, out_dir: &Path) -> (u8, String) {
    match &outcome.result {
        Ok(result) => {
            let path = out_dir.join(&outcome.problem_id);
            if result.converged {
                (
                    0,
                    format!(
                        "session {}: converged in {} iteration(s) -> {}",
                        outcome.problem_id,
                        result.iterations_used,
                        path.display()
                    ),
                )
            } else {
                (
                    2,
                    format!(
                        "session {}: budget exhausted after {} iteration(s), {} finding(s) unresolved -> {}",
                        outcome.problem_id,
                        result.iterations_used,
                        result.unresolved_feedback().len(),
                        path.display()
                    ),
                )
            }
        }
        Err(error) => (1, format!("session {}: failed: {error}", outcome.problem_id)),
    }
}

pub fn solve(args: SolveArgs) -> Result<u8, String> {
    let config = effective_config(&args.engine)?;
    let provider = build_provider(&config)?;
    let problems = args
        .problems
        .iter()
        .map(|path| load_problem(path))
        .collect::<Result<Vec<_>, _>>()?;

    let outcomes = orchestrator::run_manifest(
        &problems,
        &config.engine,
        provider.as_ref(),
        &args.out,
        args.parallelism,
    )
    .map_err(|e| e.to_string())?;

    let mut code = 0u8;
    for outcome in &outcomes {
        let (c, line) = describe_outcome(outcome, &args.out);
        println!("{line}");
        code = highest_priority(code, c);
    }
    Ok(code)
}

/// Faults dominate budget exhaustion which dominates success.
fn highest_priority(a: u8, b: u8) -> u8 {
    if a == 1 || b == 1 {
        1
    } else {
        a.max(b)
    }
}

struct VariantRow {
    name: &'static str,
    converged: bool,
    iterations: u32,
    review_calls: usize,
    calls_per_iteration: String,
    final_chain_len: usize,
}

fn variant_name(s: &str) -> Result<&'static str, String> {
    match s {
        "full" => Ok("full"),
        "no-structured-augmentation" => Ok("no-structured-augmentation"),
        "no-structured-review" => Ok("no-structured-review"),
        "no-atomic-review" => Ok("no-atomic-review"),
        other => Err(format!(
            "unknown variant `{other}` (expected full, no-structured-augmentation, no-structured-review, no-atomic-review)"
        )),
    }
}

fn apply_variant(config: &ConfigFile, variant: &str) -> ConfigFile {
    let mut config = config.clone();
    match variant {
        "no-structured-augmentation" => config.engine.augment_mode = AugmentMode::Generic,
        "no-structured-review" => config.engine.review_prompt_style = ReviewPromptStyle::Plain,
        "no-atomic-review" => config.engine.review_mode = ReviewMode::Holistic,
        _ => {}
    }
    config
}

pub fn ablate(args: AblateArgs) -> Result<u8, String> {
    let base = effective_config(&args.engine)?;
    let problem = load_problem(&args.problem)?;

    let mut names = Vec::new();
    for variant in &args.variants {
        names.push(variant_name(variant)?);
    }

    let mut rows = Vec::new();
    let mut code = 0u8;
    for name in names {
        let config = apply_variant(&base, name);
        // each variant gets a fresh provider so scripted call counts reset
        let provider = build_provider(&config)?;
        let session_dir = args.out.join(name);
        match orchestrator::solve(&problem, &config.engine, provider.as_ref(), &session_dir) {
            Ok(outcome) => {
                let review_calls = outcome
                    .trace
                    .exchanges
                    .iter()
                    .filter(|e| e.tag.starts_with("review:"))
                    .count();
                let per_iter = review_calls as f64 / outcome.iterations_used.max(1) as f64;
                rows.push(VariantRow {
                    name,
                    converged: outcome.converged,
                    iterations: outcome.iterations_used,
                    review_calls,
                    calls_per_iteration: if per_iter.fract() == 0.0 {
                        format!("{}", per_iter as u64)
                    } else {
                        format!("{per_iter:.1}")
                    },
                    final_chain_len: outcome.final_chain.len(),
                });
                if !outcome.converged {
                    code = highest_priority(code, 2);
                }
            }
            Err(error) => {
                println!("variant {name}: failed: {error}");
                code = 1;
            }
        }
    }

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<28} {:>9} {:>10} {:>12} {:>10} {:>11}",
        "variant", "converged", "iterations", "review calls", "calls/iter", "chain steps"
    );
    for row in &rows {
        let _ = writeln!(
            table,
            "{:<28} {:>9} {:>10} {:>12} {:>10} {:>11}",
            row.name,
            if row.converged { "yes" } else { "no" },
            row.iterations,
            row.review_calls,
            row.calls_per_iteration,
            row.final_chain_len
        );
    }
    print!("{table}");
    Ok(code)
}

fn changed_steps(before: &LogicalChain, after: &LogicalChain) -> Vec<usize> {
    let mut changed = Vec::new();
    let common = before.len().min(after.len());
    for i in 0..common {
        if before.steps[i] != after.steps[i] {
            changed.push(i + 1);
        }
    }
    for index in common..before.len().max(after.len()) {
        changed.push(index + 1);
    }
    changed
}

fn render_session(stored: &StoredSession) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "session: {}", stored.problem.id);
    let mode = match stored.config.review_mode {
        ReviewMode::Atomic => "atomic",
        ReviewMode::Holistic => "holistic",
    };
    let augment = match stored.config.augment_mode {
        AugmentMode::Structured => "structured",
        AugmentMode::Generic => "generic",
    };
    let _ = writeln!(out, "mode: {mode} review, {augment} augmentation");
    let _ = writeln!(out, "exchanges: {}", stored.exchanges.len());

    match stored.iterations.last() {
        Some(last) if last.report.overall => {
            let _ = writeln!(out, "converged: yes, in {} iteration(s)", last.iteration);
        }
        Some(last) => {
            let _ = writeln!(out, "converged: no, after {} iteration(s)", last.iteration);
        }
        None => {
            let _ = writeln!(out, "converged: no iterations recorded");
        }
    }

    for (i, record) in stored.iterations.iter().enumerate() {
        let _ = writeln!(out, "\niteration {}", record.iteration);
        if i > 0 {
            let changed = changed_steps(&stored.iterations[i - 1].chain, &record.chain);
            if changed.is_empty() {
                let _ = writeln!(out, "  unchanged from iteration {}", record.iteration - 1);
            } else {
                let steps = changed
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(
                    out,
                    "  changed vs iteration {}: step(s) {steps}",
                    record.iteration - 1
                );
            }
        }
        let _ = writeln!(out, "  chain: {} step(s)", record.chain.len());
        for step in &record.chain.steps {
            let principle = step.principle.lines().next().unwrap_or("");
            let _ = writeln!(out, "    {}. {}", step.index, principle);
        }
        let _ = writeln!(out, "  verdicts (mode={})", record.report.mode.as_str());
        let _ = writeln!(out, "    {:>4}  {:>9}  {:>10}  feedback", "step", "principle", "derivation");
        for verdict in &record.report.verdicts {
            let feedback = verdict
                .feedback
                .as_deref()
                .map(|f| f.lines().next().unwrap_or("").to_string())
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "    {:>4}  {:>9}  {:>10}  {}",
                verdict.index,
                if verdict.principle_ok { "ok" } else { "WRONG" },
                if verdict.derivation_ok { "ok" } else { "WRONG" },
                feedback
            );
        }
        if let Some(summary) = &record.summary {
            let first = summary.text.lines().next().unwrap_or("");
            let _ = writeln!(out, "  summary: {first}");
        }
    }
    out
}

pub fn replay(args: ReplayArgs) -> Result<u8, String> {
    let stored = load_session(&args.trace_dir).map_err(|e| e.to_string())?;
    print!("{}", render_session(&stored));
    Ok(0)
}

pub fn resume(args: ResumeArgs) -> Result<u8, String> {
    let config = effective_config(&args.engine)?;
    let provider = build_provider(&config)?;
    let outcome =
        orchestrator::resume(&args.trace_dir, provider.as_ref()).map_err(|e| e.to_string())?;
    if outcome.converged {
        println!(
            "session {}: converged in {} iteration(s)",
            outcome.trace.problem_id, outcome.iterations_used
        );
        Ok(0)
    } else {
        println!(
            "session {}: budget exhausted after {} iteration(s)",
            outcome.trace.problem_id, outcome.iterations_used
        );
        Ok(2)
    }
}

/// Parses a `--marks` spec: `name=path,path` or bare paths (named `marks`).
fn parse_marks_spec(spec: &str) -> (String, Vec<&str>) {
    match spec.split_once('=') {
        Some((name, paths)) => (name.to_string(), paths.split(',').collect()),
        None => ("marks".to_string(), spec.split(',').collect()),
    }
}

pub fn score(args: ScoreArgs) -> Result<u8, String> {
    let rubrics = args
        .rubrics
        .iter()
        .map(|path| Rubric::load(path).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut cards = Vec::new();
    for spec in &args.marks {
        let (name, paths) = parse_marks_spec(spec);
        let sheets = paths
            .iter()
            .map(|p| MarkSheet::load(Path::new(p)).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let card = scoring::score(&rubrics, &sheets).map_err(|e| e.to_string())?;
        cards.push(NamedCard { name, card });
    }

    let ranked = scoring::compare(&cards).map_err(|e| e.to_string())?;
    print!("{}", scoring::render_table(&ranked));
    if let [only] = ranked.as_slice() {
        println!();
        print!("{}", only.card.to_document());
    }
    Ok(0)
}
