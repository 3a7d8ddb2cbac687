//! Solution generation and refinement.
//!
//! The augmenter asks the provider for a complete solution as a sequence of
//! `Step / Principle / Derivation` blocks, parses it tolerantly, validates
//! the resulting chain and loops a bounded repair conversation on defects.
//! Refinement always re-emits the full chain, never patches.

use std::fmt;

use thiserror::Error;

use crate::chain::{validate_chain, LogicalChain, RawProblem, Step, StructuredProblem};
use crate::config::{AugmentMode, StageParams};
use crate::prompts::{self, render_chain, render_problem, TemplateStore};
use crate::provider::{ChatRequest, ImagePart, Message, Provider, ProviderError};

/// Severity of a chain-parse defect. Warnings (renumbered gaps) do not block
/// acceptance; errors trigger the repair loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

/// One defect found while parsing model output into a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDefect {
    pub severity: Severity,
    pub message: String,
}

impl ChainDefect {
    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl fmt::Display for ChainDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.severity {
            Severity::Warning => write!(f, "warning: {}", self.message),
            Severity::Error => write!(f, "{}", self.message),
        }
    }
}

/// A successfully parsed chain plus any non-blocking warnings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedChain {
    pub chain: LogicalChain,
    pub warnings: Vec<ChainDefect>,
}

#[derive(Debug, Error)]
pub enum AugmenterError {
    #[error("augmentation failed after {calls} provider calls: {}", format_defects(.defects))]
    AugmentationFailed {
        calls: u32,
        defects: Vec<ChainDefect>,
        last_response: String,
    },
    #[error("refinement requires a non-empty feedback summary")]
    EmptyFeedback,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] crate::prompts::TemplateError),
}

fn format_defects(defects: &[ChainDefect]) -> String {
    defects
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Recognizes a `Step <n>` block header, tolerating markdown decoration such
/// as `**Step 3:**` or `### Step 3 - setup`.
fn step_header(line: &str) -> Option<u64> {
    let mut s = line.trim();
    while let Some(rest) = s
        .strip_prefix('#')
        .or_else(|| s.strip_prefix('*'))
        .or_else(|| s.strip_prefix('_'))
        .or_else(|| s.strip_prefix('>'))
    {
        s = rest.trim_start();
    }
    let rest = s.strip_prefix("Step ").or_else(|| s.strip_prefix("step "))?;
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let after = &rest[digits.len()..];
    let after = after.trim_start_matches(['*', '_']);
    // the header may end, or continue with punctuation and a title
    if after.is_empty()
        || after.starts_with(':')
        || after.starts_with('.')
        || after.starts_with('-')
        || after.starts_with('(')
        || after.starts_with(' ')
    {
        digits.parse().ok()
    } else {
        None
    }
}

/// Recognizes a labeled field line (`Principle:` / `Derivation:`), tolerant
/// to bold markers, and returns the text after the label.
fn field_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let s = line.trim_start();
    let s = s.trim_start_matches(['*', '_', '#', '-']).trim_start();
    let rest = s.strip_prefix(label)?;
    let rest = rest.trim_start_matches(['*', '_']);
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim_start_matches(['*', '_']).trim_start())
}

#[derive(PartialEq)]
enum BlockPart {
    Preamble,
    Principle,
    Derivation,
}

struct RawBlock {
    number: u64,
    principle: String,
    derivation: String,
    saw_principle: bool,
    saw_derivation: bool,
}

/// Parses model output into a chain. Total on arbitrary text: it returns
/// either the parsed chain (with warnings for renumbered gaps) or the defect
/// list. Surrounding prose and markdown decoration are ignored; steps are
/// renumbered to contiguous `1..=m` in order of appearance.
pub fn parse_chain(text: &str, problem_id: &str) -> Result<ParsedChain, Vec<ChainDefect>> {
    let mut blocks: Vec<RawBlock> = Vec::new();
    let mut part = BlockPart::Preamble;

    for line in text.lines() {
        if let Some(number) = step_header(line) {
            blocks.push(RawBlock {
                number,
                principle: String::new(),
                derivation: String::new(),
                saw_principle: false,
                saw_derivation: false,
            });
            part = BlockPart::Preamble;
            continue;
        }
        let Some(block) = blocks.last_mut() else {
            continue; // prose before the first step header
        };
        if let Some(rest) = field_label(line, "Principle").or_else(|| field_label(line, "principle")) {
            block.saw_principle = true;
            block.principle = rest.to_string();
            part = BlockPart::Principle;
            continue;
        }
        if let Some(rest) = field_label(line, "Derivation").or_else(|| field_label(line, "derivation")) {
            block.saw_derivation = true;
            block.derivation = rest.to_string();
            part = BlockPart::Derivation;
            continue;
        }
        // continuation lines extend the field being read
        let target = match part {
            BlockPart::Principle => &mut block.principle,
            BlockPart::Derivation => &mut block.derivation,
            BlockPart::Preamble => continue,
        };
        if !target.is_empty() {
            target.push('\n');
        }
        target.push_str(line);
    }

    if blocks.is_empty() {
        return Err(vec![ChainDefect::error("no steps found")]);
    }

    let mut defects = Vec::new();
    let mut warnings = Vec::new();
    let mut steps = Vec::with_capacity(blocks.len());
    let mut previous_number: Option<u64> = None;
    for (position, block) in blocks.iter().enumerate() {
        let index = position + 1;
        if let Some(prev) = previous_number {
            if block.number > prev + 1 {
                warnings.push(ChainDefect::warning(format!(
                    "gap after step {prev}: next step numbered {}",
                    block.number
                )));
            } else if block.number <= prev {
                warnings.push(ChainDefect::warning(format!(
                    "step numbering goes backwards at original step {}",
                    block.number
                )));
            }
        } else if block.number != 1 {
            warnings.push(ChainDefect::warning(format!(
                "numbering starts at {} instead of 1",
                block.number
            )));
        }
        previous_number = Some(block.number);

        if !block.saw_principle {
            defects.push(ChainDefect::error(format!(
                "step {index}: missing \"Principle:\" field"
            )));
        } else if block.principle.trim().is_empty() {
            defects.push(ChainDefect::error(format!("step {index}: empty principle")));
        }
        if !block.saw_derivation {
            defects.push(ChainDefect::error(format!(
                "step {index}: missing \"Derivation:\" field"
            )));
        } else if block.derivation.trim().is_empty() {
            defects.push(ChainDefect::error(format!("step {index}: empty derivation")));
        }
        steps.push(Step::new(
            index,
            block.principle.trim_end().to_string(),
            block.derivation.trim_end().to_string(),
        ));
    }

    if !defects.is_empty() {
        defects.extend(warnings);
        return Err(defects);
    }
    Ok(ParsedChain {
        chain: LogicalChain::new(problem_id, steps),
        warnings,
    })
}

/// Inputs shared by the generation and refinement operations. Structured
/// mode prompts carry the interpretation; generic mode uses the raw
/// statement.
pub struct ProblemContext<'a> {
    pub raw: &'a RawProblem,
    pub structured: &'a StructuredProblem,
}

pub struct Augmenter<'a> {
    pub templates: &'a TemplateStore,
    pub params: StageParams,
    pub mode: AugmentMode,
    /// Repair attempts after a defective chain (the K budget).
    pub repairs: u32,
    /// Engine limit on chain length.
    pub max_steps: usize,
}

impl Augmenter<'_> {
    /// Generates the initial chain for a problem. Structured mode parses and
    /// validates the output with up to K repair rounds; generic mode wraps
    /// the prose reply in a single-step chain.
    pub fn generate_initial(
        &self,
        context: &ProblemContext<'_>,
        provider: &dyn Provider,
    ) -> Result<LogicalChain, AugmenterError> {
        let prompt = match self.mode {
            AugmentMode::Structured => self.templates.render(
                prompts::AUGMENT_STRUCTURED,
                &[("problem", render_problem(context.structured).as_str())],
            )?,
            AugmentMode::Generic => self.templates.render(
                prompts::AUGMENT_GENERIC,
                &[("statement", context.raw.statement.as_str())],
            )?,
        };
        self.run(context, provider, prompt)
    }

    /// Refines a chain against a feedback summary. The provider re-emits a
    /// complete chain; the input chain is never mutated.
    pub fn refine(
        &self,
        chain: &LogicalChain,
        summary: &crate::chain::FeedbackSummary,
        context: &ProblemContext<'_>,
        provider: &dyn Provider,
    ) -> Result<LogicalChain, AugmenterError> {
        if summary.text.trim().is_empty() {
            return Err(AugmenterError::EmptyFeedback);
        }
        let prompt = match self.mode {
            AugmentMode::Structured => self.templates.render(
                prompts::REFINE_STRUCTURED,
                &[
                    ("problem", render_problem(context.structured).as_str()),
                    ("chain", render_chain(chain).as_str()),
                    ("feedback", summary.text.as_str()),
                ],
            )?,
            AugmentMode::Generic => self.templates.render(
                prompts::REFINE_GENERIC,
                &[
                    ("statement", context.raw.statement.as_str()),
                    ("chain", render_chain(chain).as_str()),
                    ("feedback", summary.text.as_str()),
                ],
            )?,
        };
        self.run(context, provider, prompt)
    }

    fn run(
        &self,
        context: &ProblemContext<'_>,
        provider: &dyn Provider,
        mut prompt: String,
    ) -> Result<LogicalChain, AugmenterError> {
        let images: Vec<ImagePart> = context
            .raw
            .attachments
            .iter()
            .map(|a| ImagePart {
                media_type: a.media_type.clone(),
                bytes: a.bytes.clone(),
            })
            .collect();
        let mut calls = 0u32;
        loop {
            calls += 1;
            let request = ChatRequest {
                model_id: self.params.model_id.clone(),
                messages: vec![Message {
                    role: crate::provider::Role::User,
                    content: prompt.clone(),
                    images: images.clone(),
                }],
                temperature: self.params.temperature,
                max_output_tokens: self.params.max_output_tokens,
                request_tag: "augment".to_string(),
            };
            let response = provider.complete(&request)?;

            if self.mode == AugmentMode::Generic {
                // The whole prose reply becomes a one-step chain.
                let derivation = response.text.trim().to_string();
                if derivation.is_empty() {
                    return Err(AugmenterError::AugmentationFailed {
                        calls,
                        defects: vec![ChainDefect::error("empty solution text")],
                        last_response: response.text,
                    });
                }
                return Ok(LogicalChain::new(
                    &context.raw.id,
                    vec![Step::new(1, "(unstructured)", derivation)],
                ));
            }

            let defects = match parse_chain(&response.text, &context.raw.id) {
                Ok(parsed) => {
                    let violations = validate_chain(&parsed.chain);
                    if violations.is_empty() {
                        if parsed.chain.len() > self.max_steps {
                            vec![ChainDefect::error(format!(
                                "chain has {} steps, engine limit is {}",
                                parsed.chain.len(),
                                self.max_steps
                            ))]
                        } else {
                            return Ok(parsed.chain);
                        }
                    } else {
                        violations
                            .into_iter()
                            .map(|v| ChainDefect::error(v.to_string()))
                            .collect()
                    }
                }
                Err(defects) => defects,
            };

            if calls > self.repairs {
                return Err(AugmenterError::AugmentationFailed {
                    calls,
                    defects,
                    last_response: response.text,
                });
            }
            let defect_lines = defects
                .iter()
                .map(|d| format!("- {d}"))
                .collect::<Vec<_>>()
                .join("\n");
            prompt = self.templates.render(
                prompts::AUGMENT_REPAIR,
                &[
                    ("defects", defect_lines.as_str()),
                    ("previous", response.text.as_str()),
                ],
            )?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::FeedbackSummary;
    use crate::config::{EngineConfig, Stage};
    use crate::provider::{CallCount, ScriptRule, ScriptedProvider};

    const TWO_STEPS: &str = "Step 1\nPrinciple: Conservation of energy\nDerivation: E_i = E_f gives v = sqrt(2gh)\n\nStep 2\nPrinciple: Projectile kinematics\nDerivation: Range R = v t with t = sqrt(2H/g)\n";

    #[test]
    fn canonical_two_step_text_parses() {
        let parsed = parse_chain(TWO_STEPS, "p1").unwrap();
        assert_eq!(parsed.chain.len(), 2);
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.chain.steps[0].principle, "Conservation of energy");
        assert!(parsed.chain.steps[1].derivation.contains("R = v t"));
    }

    #[test]
    fn markdown_decoration_is_tolerated() {
        let text = "Intro prose the model added.\n\n**Step 1:** setup\n**Principle**: Newton's second law\n**Derivation:** F = ma\n\n### Step 2 - continue\n- Principle: Hooke's law\n- Derivation: F = -kx\nSome trailing commentary is fine.\n";
        let parsed = parse_chain(text, "p1").unwrap();
        assert_eq!(parsed.chain.len(), 2);
        assert_eq!(parsed.chain.steps[0].principle, "Newton's second law");
        assert_eq!(parsed.chain.steps[1].principle, "Hooke's law");
        assert!(parsed.chain.steps[1].derivation.starts_with("F = -kx"));
    }

    #[test]
    fn numbering_gap_renumbers_with_warning() {
        let text = TWO_STEPS.replace("Step 2", "Step 3");
        let parsed = parse_chain(&text, "p1").unwrap();
        assert_eq!(parsed.chain.len(), 2);
        assert_eq!(parsed.chain.steps[1].index, 2);
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].message.contains("gap after step 1"));
    }

    #[test]
    fn prose_only_reports_no_steps() {
        let defects = parse_chain("The answer is 42 because of symmetry.", "p1").unwrap_err();
        assert_eq!(defects.len(), 1);
        assert_eq!(defects[0].message, "no steps found");
    }

    #[test]
    fn missing_field_is_an_error_defect() {
        let text = "Step 1\nPrinciple: something\n\nStep 2\nDerivation: no principle given\n";
        let defects = parse_chain(text, "p1").unwrap_err();
        assert!(defects.iter().any(|d| d.message.contains("step 1") && d.message.contains("Derivation")));
        assert!(defects.iter().any(|d| d.message.contains("step 2") && d.message.contains("Principle")));
    }

    #[test]
    fn multiline_fields_keep_their_lines() {
        let text = "Step 1\nPrinciple: Gauss's law\nfor the displacement field\nDerivation: flux = q/eps0\nso E = q / (4 pi eps0 r^2)\n";
        let parsed = parse_chain(text, "p1").unwrap();
        assert_eq!(parsed.chain.steps[0].principle, "Gauss's law\nfor the displacement field");
        assert!(parsed.chain.steps[0].derivation.contains("so E ="));
    }

    #[test]
    fn parse_chain_is_total_on_junk() {
        for junk in ["", "Step", "Step x", "Step 1", "Principle: orphan", "\u{7}\u{8}"] {
            let _ = parse_chain(junk, "p1");
        }
    }

    fn augmenter<'a>(templates: &'a TemplateStore, mode: AugmentMode) -> Augmenter<'a> {
        Augmenter {
            templates,
            params: EngineConfig::default().stage_params(Stage::Augment),
            mode,
            repairs: 2,
            max_steps: 200,
        }
    }

    fn context<'a>(
        raw: &'a RawProblem,
        structured: &'a StructuredProblem,
    ) -> ProblemContext<'a> {
        ProblemContext { raw, structured }
    }

    #[test]
    fn structured_generation_accepts_well_formed_chain() {
        let five_steps: String = (1..=5)
            .map(|i| format!("Step {i}\nPrinciple: law {i}\nDerivation: result {i}\n\n"))
            .collect();
        let provider =
            ScriptedProvider::new(vec![ScriptRule::reply("augment", CallCount::Any, five_steps)]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let chain = augmenter(&templates, AugmentMode::Structured)
            .generate_initial(&context(&raw, &structured), &provider)
            .unwrap();
        assert_eq!(chain.len(), 5);
        assert!(validate_chain(&chain).is_empty());
        assert_eq!(provider.call_count(), 1);
    }

    #[test]
    fn structured_generation_repairs_empty_principle() {
        let bad = "Step 1\nPrinciple:\nDerivation: something\n";
        let provider = ScriptedProvider::new(vec![
            ScriptRule::reply("augment", CallCount::Exactly(1), bad),
            ScriptRule::reply("augment", CallCount::AtLeast(2), TWO_STEPS),
        ]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let chain = augmenter(&templates, AugmentMode::Structured)
            .generate_initial(&context(&raw, &structured), &provider)
            .unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(provider.call_count(), 2);
        let repair_prompt = &provider.recorded_requests()[1].messages[0].content;
        assert!(repair_prompt.contains("empty principle"));
    }

    #[test]
    fn structured_generation_exhausts_after_one_plus_k_calls() {
        let provider = ScriptedProvider::new(vec![ScriptRule::reply(
            "augment",
            CallCount::Any,
            "no steps at all",
        )]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let err = augmenter(&templates, AugmentMode::Structured)
            .generate_initial(&context(&raw, &structured), &provider)
            .unwrap_err();
        assert!(matches!(err, AugmenterError::AugmentationFailed { calls: 3, .. }));
        assert_eq!(provider.call_count(), 3);
    }

    #[test]
    fn generic_mode_wraps_prose_in_one_step() {
        let provider = ScriptedProvider::new(vec![ScriptRule::reply(
            "augment",
            CallCount::Any,
            "The answer is 42 by dimensional analysis.",
        )]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let chain = augmenter(&templates, AugmentMode::Generic)
            .generate_initial(&context(&raw, &structured), &provider)
            .unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.steps[0].principle, "(unstructured)");
        assert!(chain.steps[0].derivation.contains("42"));
        // generic prompts carry the raw statement, not the interpretation
        let prompt = &provider.recorded_requests()[0].messages[0].content;
        assert!(prompt.contains("statement"));
    }

    #[test]
    fn refine_rejects_empty_summary_before_any_call() {
        let provider = ScriptedProvider::new(vec![ScriptRule::reply("augment", CallCount::Any, TWO_STEPS)]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let chain = parse_chain(TWO_STEPS, "p1").unwrap().chain;
        let summary = FeedbackSummary {
            text: "  ".to_string(),
            source_indices: vec![],
        };
        let err = augmenter(&templates, AugmentMode::Structured)
            .refine(&chain, &summary, &context(&raw, &structured), &provider)
            .unwrap_err();
        assert!(matches!(err, AugmenterError::EmptyFeedback));
        assert_eq!(provider.call_count(), 0);
    }

    #[test]
    fn refine_re_emits_full_chain_and_leaves_input_untouched() {
        let fixed = TWO_STEPS.replace("R = v t", "R = v t (corrected sign)");
        let provider = ScriptedProvider::new(vec![ScriptRule::reply("augment", CallCount::Any, fixed)]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let original = parse_chain(TWO_STEPS, "p1").unwrap().chain;
        let before = original.clone();
        let summary = FeedbackSummary {
            text: "Step 2: sign error in the range formula".to_string(),
            source_indices: vec![2],
        };
        let refined = augmenter(&templates, AugmentMode::Structured)
            .refine(&original, &summary, &context(&raw, &structured), &provider)
            .unwrap();
        assert_eq!(original, before, "refine must not mutate its input");
        assert_eq!(refined.len(), 2);
        assert_eq!(refined.steps[0], original.steps[0]);
        assert_ne!(refined.steps[1].derivation, original.steps[1].derivation);
    }

    #[test]
    fn chain_over_engine_limit_is_a_defect() {
        let long: String = (1..=4)
            .map(|i| format!("Step {i}\nPrinciple: p{i}\nDerivation: d{i}\n\n"))
            .collect();
        let provider = ScriptedProvider::new(vec![ScriptRule::reply("augment", CallCount::Any, long)]);
        let templates = TemplateStore::builtin();
        let raw = RawProblem::new("p1", "statement");
        let structured = StructuredProblem::from_raw_statement("statement");
        let mut a = augmenter(&templates, AugmentMode::Structured);
        a.max_steps = 3;
        let err = a
            .generate_initial(&context(&raw, &structured), &provider)
            .unwrap_err();
        match err {
            AugmenterError::AugmentationFailed { defects, .. } => {
                assert!(defects[0].message.contains("engine limit"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
