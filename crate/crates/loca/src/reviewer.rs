//! Atomic and holistic chain review.
//!
//! Atomic review walks the chain strictly in order and evaluates every step
//! with two independent checks: one for the stated principle, one for the
//! derivation. Each check assumes the preceding context is correct and must
//! end its reply with a hard `VERDICT: CORRECT` / `VERDICT: WRONG` marker
//! line. A wrong verdict never halts the walk; the full feedback set is
//! collected in one pass. Holistic review evaluates the whole chain in a
//! single principle-focused and a single derivation-focused exchange.

use thiserror::Error;

use crate::chain::{
    context_prefix, ChainError, FeedbackSummary, LogicalChain, ReviewMode, ReviewReport, Step,
    StepVerdict, StructuredProblem,
};
use crate::config::{ReviewPromptStyle, StageParams};
use crate::prompts::{self, render_chain, render_context, render_problem, render_step, TemplateStore};
use crate::provider::{ChatRequest, Message, Provider, ProviderError};

/// Which of the two per-step checks a message concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Principle,
    Derivation,
}

impl CheckKind {
    fn tag_letter(&self) -> &'static str {
        match self {
            CheckKind::Principle => "P",
            CheckKind::Derivation => "D",
        }
    }
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("step {step} {check:?} check: no verdict marker after retry")]
    VerdictUnparseable {
        step: usize,
        check: CheckKind,
        last_response: String,
    },
    #[error("review aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        partial: Vec<StepVerdict>,
        #[source]
        source: Box<ReviewError>,
    },
    #[error("cannot summarize an empty feedback set")]
    EmptyFeedbackSet,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] crate::prompts::TemplateError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Extracts the terminal verdict marker. The marker must be its own line;
/// markdown emphasis and a trailing period are tolerated. Scans from the end
/// so commentary that quotes the marker grammar earlier does not confuse it.
fn parse_verdict_marker(text: &str) -> Option<bool> {
    for line in text.lines().rev() {
        let s = line
            .trim()
            .trim_matches(|c| c == '*' || c == '_' || c == '`' || c == '#')
            .trim();
        let upper = s.to_uppercase();
        let Some(rest) = upper.strip_prefix("VERDICT:") else {
            continue;
        };
        match rest.trim().trim_end_matches(['.', '!']) {
            "CORRECT" => return Some(true),
            "WRONG" => return Some(false),
            _ => continue,
        }
    }
    None
}

/// The response text with marker lines removed: what remains is the
/// reviewer's explanation, used as feedback for wrong verdicts.
fn strip_verdict_marker(text: &str) -> String {
    text.lines()
        .filter(|line| {
            let s = line
                .trim()
                .trim_matches(|c| c == '*' || c == '_' || c == '`' || c == '#')
                .trim()
                .to_uppercase();
            !s.starts_with("VERDICT:")
        })
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

/// A `Step <n>: WRONG - reason` line from a holistic reply.
fn parse_enumerated_failure(line: &str) -> Option<(usize, String)> {
    let s = line.trim().trim_start_matches(['*', '-', '_', '#']).trim();
    let rest = s.strip_prefix("Step ").or_else(|| s.strip_prefix("step "))?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let after = rest[digits.len()..].trim_start_matches([':', '.', ' ']);
    let upper = after.to_uppercase();
    let wrong_at = upper.find("WRONG")?;
    let reason = after[wrong_at + "WRONG".len()..]
        .trim_start_matches(['*', '_'])
        .trim_start_matches([':', '-', ' ', '\u{2014}', '\u{2013}'])
        .trim()
        .to_string();
    let index: usize = digits.parse().ok()?;
    let reason = if reason.is_empty() {
        format!("step {index} judged wrong")
    } else {
        reason
    };
    Some((index, reason))
}

/// One dimension's holistic result.
struct HolisticPass {
    /// Blanket verdict from the terminal marker.
    ok: bool,
    /// Enumerated per-step failures, if the reply listed any.
    failures: Vec<(usize, String)>,
    /// Explanation text (marker stripped).
    body: String,
}

pub struct Reviewer<'a> {
    pub templates: &'a TemplateStore,
    pub params: StageParams,
    pub style: ReviewPromptStyle,
}

impl Reviewer<'_> {
    fn step_template(&self, check: CheckKind) -> &'static str {
        match (self.style, check) {
            (ReviewPromptStyle::Structured, CheckKind::Principle) => prompts::REVIEW_PRINCIPLE,
            (ReviewPromptStyle::Structured, CheckKind::Derivation) => prompts::REVIEW_DERIVATION,
            (ReviewPromptStyle::Plain, CheckKind::Principle) => prompts::REVIEW_PRINCIPLE_PLAIN,
            (ReviewPromptStyle::Plain, CheckKind::Derivation) => prompts::REVIEW_DERIVATION_PLAIN,
        }
    }

    fn holistic_template(&self, check: CheckKind) -> &'static str {
        match (self.style, check) {
            (ReviewPromptStyle::Structured, CheckKind::Principle) => {
                prompts::REVIEW_HOLISTIC_PRINCIPLE
            }
            (ReviewPromptStyle::Structured, CheckKind::Derivation) => {
                prompts::REVIEW_HOLISTIC_DERIVATION
            }
            (ReviewPromptStyle::Plain, CheckKind::Principle) => {
                prompts::REVIEW_HOLISTIC_PRINCIPLE_PLAIN
            }
            (ReviewPromptStyle::Plain, CheckKind::Derivation) => {
                prompts::REVIEW_HOLISTIC_DERIVATION_PLAIN
            }
        }
    }

    /// Issues one check with the hard verdict-marker contract and a single
    /// repair retry. Unparseable replies are faults, never treated as wrong.
    fn run_check(
        &self,
        provider: &dyn Provider,
        prompt: String,
        tag: String,
        step: usize,
        check: CheckKind,
    ) -> Result<(bool, String), ReviewError> {
        let request = ChatRequest {
            model_id: self.params.model_id.clone(),
            messages: vec![Message::user(prompt)],
            temperature: self.params.temperature,
            max_output_tokens: self.params.max_output_tokens,
            request_tag: tag.clone(),
        };
        let response = provider.complete(&request)?;
        if let Some(ok) = parse_verdict_marker(&response.text) {
            return Ok((ok, response.text));
        }
        let repair_prompt = self
            .templates
            .render(prompts::VERDICT_REPAIR, &[("previous", response.text.as_str())])?;
        let repair = ChatRequest {
            model_id: self.params.model_id.clone(),
            messages: vec![Message::user(repair_prompt)],
            temperature: self.params.temperature,
            max_output_tokens: self.params.max_output_tokens,
            request_tag: tag,
        };
        let retry = provider.complete(&repair)?;
        match parse_verdict_marker(&retry.text) {
            Some(ok) => Ok((ok, retry.text)),
            None => Err(ReviewError::VerdictUnparseable {
                step,
                check,
                last_response: retry.text,
            }),
        }
    }

    /// Reviews one step atomically: a principle check and a derivation
    /// check, each assuming the preceding context correct. Both checks
    /// always run, so the feedback can carry both defect kinds.
    pub fn review_step(
        &self,
        step: &Step,
        context: &[Step],
        problem: &StructuredProblem,
        provider: &dyn Provider,
    ) -> Result<StepVerdict, ReviewError> {
        let problem_text = render_problem(problem);
        let context_text = render_context(context);
        let step_text = render_step(step);

        let mut outcome: [(bool, String); 2] = [(true, String::new()), (true, String::new())];
        for (slot, check) in [(0, CheckKind::Principle), (1, CheckKind::Derivation)] {
            let prompt = self.templates.render(
                self.step_template(check),
                &[
                    ("problem", problem_text.as_str()),
                    ("context", context_text.as_str()),
                    ("step", step_text.as_str()),
                ],
            )?;
            let tag = format!("review:{}:{}", check.tag_letter(), step.index);
            outcome[slot] = self.run_check(provider, prompt, tag, step.index, check)?;
        }
        let [(principle_ok, p_text), (derivation_ok, d_text)] = outcome;

        if principle_ok && derivation_ok {
            return Ok(StepVerdict::correct(step.index));
        }
        let mut feedback_parts = Vec::new();
        if !principle_ok {
            let body = strip_verdict_marker(&p_text);
            feedback_parts.push(if body.is_empty() {
                "the principle check returned WRONG without an explanation".to_string()
            } else {
                body
            });
        }
        if !derivation_ok {
            let body = strip_verdict_marker(&d_text);
            feedback_parts.push(if body.is_empty() {
                "the derivation check returned WRONG without an explanation".to_string()
            } else {
                body
            });
        }
        Ok(StepVerdict::wrong(
            step.index,
            principle_ok,
            derivation_ok,
            feedback_parts.join("\n"),
        )?)
    }

    /// Reviews every step of the chain strictly in order, never halting on
    /// a wrong verdict, and aggregates the results. Exactly `2m` review
    /// calls on the no-repair path. A provider or parse fault aborts with
    /// the verdicts gathered so far attached for diagnosis.
    pub fn review_chain_atomic(
        &self,
        chain: &LogicalChain,
        problem: &StructuredProblem,
        provider: &dyn Provider,
    ) -> Result<ReviewReport, ReviewError> {
        let mut verdicts: Vec<StepVerdict> = Vec::with_capacity(chain.len());
        for ordinal in 1..=chain.len() {
            let context = context_prefix(chain, ordinal)?;
            let step = &chain.steps[ordinal - 1];
            match self.review_step(step, context, problem, provider) {
                Ok(verdict) => verdicts.push(verdict),
                Err(source) => {
                    return Err(ReviewError::Aborted {
                        step: ordinal,
                        partial: verdicts,
                        source: Box::new(source),
                    })
                }
            }
        }
        Ok(ReviewReport::assemble(
            ReviewMode::Atomic,
            verdicts,
            chain.len(),
        )?)
    }

    /// Reviews the whole chain in two exchanges, one per check dimension.
    /// Replies that enumerate `Step <n>: WRONG` lines yield per-step
    /// verdicts; a blanket reply yields a single chain-level verdict at
    /// index 0.
    pub fn review_chain_holistic(
        &self,
        chain: &LogicalChain,
        problem: &StructuredProblem,
        provider: &dyn Provider,
    ) -> Result<ReviewReport, ReviewError> {
        let problem_text = render_problem(problem);
        let chain_text = render_chain(chain);

        let mut passes = Vec::with_capacity(2);
        for check in [CheckKind::Principle, CheckKind::Derivation] {
            let prompt = self.templates.render(
                self.holistic_template(check),
                &[
                    ("problem", problem_text.as_str()),
                    ("chain", chain_text.as_str()),
                ],
            )?;
            let tag = format!("review:{}:0", check.tag_letter());
            let (ok, text) = self.run_check(provider, prompt, tag, 0, check)?;
            let failures: Vec<(usize, String)> = text
                .lines()
                .filter_map(parse_enumerated_failure)
                .collect();
            passes.push(HolisticPass {
                ok,
                failures,
                body: strip_verdict_marker(&text),
            });
        }
        let [principle_pass, derivation_pass] = match passes.try_into() {
            Ok(array) => array,
            Err(_) => unreachable!("two checks produce two passes"),
        };

        let mut failed: std::collections::BTreeMap<usize, (Option<String>, Option<String>)> =
            std::collections::BTreeMap::new();
        let mut record =
            |pass: &HolisticPass, slot: usize| {
                if pass.ok {
                    return;
                }
                if pass.failures.is_empty() {
                    // blanket rejection: chain-level verdict at index 0
                    let entry = failed.entry(0).or_default();
                    let body = if pass.body.is_empty() {
                        "the holistic check returned WRONG without an explanation".to_string()
                    } else {
                        pass.body.clone()
                    };
                    if slot == 0 {
                        entry.0 = Some(body);
                    } else {
                        entry.1 = Some(body);
                    }
                    return;
                }
                for (index, reason) in &pass.failures {
                    let entry = failed.entry(*index).or_default();
                    if slot == 0 {
                        entry.0 = Some(reason.clone());
                    } else {
                        entry.1 = Some(reason.clone());
                    }
                }
            };
        record(&principle_pass, 0);
        record(&derivation_pass, 1);

        let verdicts: Vec<StepVerdict> = if failed.is_empty() {
            // both dimensions blanket-correct: one chain-level verdict
            vec![StepVerdict::correct(0)]
        } else {
            failed
                .into_iter()
                .map(|(index, (p_reason, d_reason))| {
                    let feedback = [p_reason.clone(), d_reason.clone()]
                        .into_iter()
                        .flatten()
                        .collect::<Vec<_>>()
                        .join("\n");
                    StepVerdict::wrong(index, p_reason.is_none(), d_reason.is_none(), feedback)
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        Ok(ReviewReport::assemble(
            ReviewMode::Holistic,
            verdicts,
            chain.len(),
        )?)
    }
}

/// How feedback summaries are produced.
pub enum SummarizerBackend<'a> {
    /// Deterministic concatenation with step labels; used in tests and
    /// offline runs.
    Offline,
    /// One condensation exchange through the provider.
    Provider(&'a dyn Provider),
}

/// Renders one labeled findings line per wrong step.
fn findings_lines(items: &[(usize, String)]) -> String {
    items
        .iter()
        .map(|(index, feedback)| {
            if *index == 0 {
                format!("Solution: {feedback}")
            } else {
                format!("Step {index}: {feedback}")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Condenses the wrong-step feedback into the summary handed to the next
/// refinement round. `items` must be non-empty.
pub fn summarize_feedback(
    items: &[(usize, String)],
    backend: SummarizerBackend<'_>,
    templates: &TemplateStore,
    params: &StageParams,
) -> Result<FeedbackSummary, ReviewError> {
    if items.is_empty() {
        return Err(ReviewError::EmptyFeedbackSet);
    }
    let source_indices: Vec<usize> = items.iter().map(|(i, _)| *i).collect();
    let lines = findings_lines(items);
    match backend {
        SummarizerBackend::Offline => Ok(FeedbackSummary {
            text: lines,
            source_indices,
        }),
        SummarizerBackend::Provider(provider) => {
            let prompt = templates.render(prompts::SUMMARIZE, &[("feedback", lines.as_str())])?;
            let request = ChatRequest {
                model_id: params.model_id.clone(),
                messages: vec![Message::user(prompt)],
                temperature: params.temperature,
                max_output_tokens: params.max_output_tokens,
                request_tag: "summarize".to_string(),
            };
            let response = provider.complete(&request)?;
            Ok(FeedbackSummary {
                text: response.text,
                source_indices,
            })
        }
    }
}
