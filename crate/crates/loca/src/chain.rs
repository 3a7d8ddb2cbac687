//! Core data model: problems, logical chains, verdicts and their aggregation.
//!
//! Everything here is an immutable value with no I/O and no provider calls.
//! A solution is a [`LogicalChain`] of [`Step`]s, each pairing the principle
//! invoked with the derivation that applies it; reviews produce one
//! [`StepVerdict`] per step and aggregate into a [`ReviewReport`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textfmt::{self, DocError, DocReader};

/// Version header of the canonical chain document.
pub const CHAIN_FORMAT: &str = "loca-chain/1";
/// Version header of the problem file.
pub const PROBLEM_FORMAT: &str = "loca-problem/1";

/// A figure or diagram referenced by a problem statement. The engine treats
/// the bytes as opaque; understanding them is the provider's job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

/// A problem exactly as posed: identifier, full statement text and any
/// figure attachments in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawProblem {
    pub id: String,
    pub statement: String,
    pub attachments: Vec<Attachment>,
}

impl RawProblem {
    pub fn new(id: impl Into<String>, statement: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            statement: statement.into(),
            attachments: Vec::new(),
        }
    }
}

/// One named variable from the interpretation's variable table. Lines that
/// did not split into `symbol: definition` keep an empty symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub symbol: String,
    pub definition: String,
}

/// The five-section structured reading of a problem statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredProblem {
    pub system_description: String,
    pub variables: Vec<Variable>,
    pub initial_conditions: Vec<String>,
    pub constraints_assumptions: Vec<String>,
    pub objectives: Vec<String>,
}

impl StructuredProblem {
    /// Degenerate interpretation used when the interpretation stage is
    /// disabled: the whole statement stands in for the system description.
    pub fn from_raw_statement(statement: &str) -> Self {
        Self {
            system_description: statement.to_string(),
            variables: Vec::new(),
            initial_conditions: vec!["As stated in the problem.".to_string()],
            constraints_assumptions: vec!["As stated in the problem.".to_string()],
            objectives: vec!["Answer every question posed by the problem.".to_string()],
        }
    }
}

/// One atomic reasoning step: the principle that justifies it and the
/// derivation that applies the principle. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub index: usize,
    pub principle: String,
    pub derivation: String,
}

impl Step {
    pub fn new(index: usize, principle: impl Into<String>, derivation: impl Into<String>) -> Self {
        Self {
            index,
            principle: principle.into(),
            derivation: derivation.into(),
        }
    }
}

/// An ordered sequence of steps solving one problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalChain {
    pub problem_id: String,
    pub steps: Vec<Step>,
}

impl LogicalChain {
    pub fn new(problem_id: impl Into<String>, steps: Vec<Step>) -> Self {
        Self {
            problem_id: problem_id.into(),
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Binary judgment for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Correct,
    Wrong,
}

/// Review outcome for a single step. `validity` is the conjunction of the
/// principle and derivation checks; feedback is present exactly when the
/// step is wrong.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepVerdict {
    pub index: usize,
    pub validity: Validity,
    pub feedback: Option<String>,
    pub principle_ok: bool,
    pub derivation_ok: bool,
}

impl StepVerdict {
    /// A passing verdict. Both checks succeeded, no feedback.
    pub fn correct(index: usize) -> Self {
        Self {
            index,
            validity: Validity::Correct,
            feedback: None,
            principle_ok: true,
            derivation_ok: true,
        }
    }

    /// A failing verdict. At least one check must have failed and feedback
    /// must be non-empty; both are structural invariants of the report.
    pub fn wrong(
        index: usize,
        principle_ok: bool,
        derivation_ok: bool,
        feedback: impl Into<String>,
    ) -> Result<Self, ChainError> {
        if principle_ok && derivation_ok {
            return Err(ChainError::VerdictInvariant {
                index,
                message: "wrong verdict with both checks passing".to_string(),
            });
        }
        let feedback = feedback.into();
        if feedback.is_empty() {
            return Err(ChainError::VerdictInvariant {
                index,
                message: "wrong verdict without feedback".to_string(),
            });
        }
        Ok(Self {
            index,
            validity: Validity::Wrong,
            feedback: Some(feedback),
            principle_ok,
            derivation_ok,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.validity == Validity::Correct
    }
}

/// Whether a review examined steps one by one or the chain as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewMode {
    Atomic,
    Holistic,
}

impl ReviewMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReviewMode::Atomic => "atomic",
            ReviewMode::Holistic => "holistic",
        }
    }
}

/// Aggregated outcome of one review pass over a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewReport {
    pub mode: ReviewMode,
    pub verdicts: Vec<StepVerdict>,
    pub overall: bool,
    pub feedback_set: Vec<String>,
}

impl ReviewReport {
    /// Builds a report from verdicts, computing the aggregates. Atomic
    /// reports must carry exactly one verdict per chain step.
    pub fn assemble(
        mode: ReviewMode,
        verdicts: Vec<StepVerdict>,
        chain_len: usize,
    ) -> Result<Self, ChainError> {
        if mode == ReviewMode::Atomic && verdicts.len() != chain_len {
            return Err(ChainError::VerdictCountMismatch {
                verdicts: verdicts.len(),
                steps: chain_len,
            });
        }
        let (overall, feedback_set) = aggregate_verdicts(&verdicts)?;
        Ok(Self {
            mode,
            verdicts,
            overall,
            feedback_set,
        })
    }

    /// The `(step index, feedback)` pairs of the wrong verdicts, in step
    /// order. This is what the summarizer consumes.
    pub fn wrong_feedback(&self) -> Vec<(usize, String)> {
        self.verdicts
            .iter()
            .filter_map(|v| v.feedback.as_ref().map(|f| (v.index, f.clone())))
            .collect()
    }
}

/// Condensed feedback handed to the next refinement round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackSummary {
    pub text: String,
    pub source_indices: Vec<usize>,
}

/// Faults of the chain-model operations. Invariant violations found by
/// [`validate_chain`] are data, not errors, and are reported separately.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("step ordinal {ordinal} out of range for chain of length {len}")]
    OrdinalOutOfRange { ordinal: usize, len: usize },
    #[error("cannot aggregate an empty verdict list")]
    EmptyVerdicts,
    #[error("verdict {index} violates an invariant: {message}")]
    VerdictInvariant { index: usize, message: String },
    #[error("atomic report has {verdicts} verdicts for a {steps}-step chain")]
    VerdictCountMismatch { verdicts: usize, steps: usize },
}

/// A broken invariant found in a chain, with the offending step when there
/// is one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub step: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Checks every structural invariant of a chain and returns all violations.
/// An empty result means the chain is well-formed.
pub fn validate_chain(chain: &LogicalChain) -> Vec<Violation> {
    let mut violations = Vec::new();
    if chain.steps.is_empty() {
        violations.push(Violation {
            step: None,
            message: "empty chain".to_string(),
        });
        return violations;
    }
    for (pos, step) in chain.steps.iter().enumerate() {
        let expected = pos + 1;
        if step.index != expected {
            violations.push(Violation {
                step: Some(expected),
                message: format!(
                    "non-contiguous index at position {expected}: found {}",
                    step.index
                ),
            });
        }
        if step.principle.trim().is_empty() {
            violations.push(Violation {
                step: Some(step.index),
                message: "empty principle".to_string(),
            });
        }
        if step.derivation.trim().is_empty() {
            violations.push(Violation {
                step: Some(step.index),
                message: "empty derivation".to_string(),
            });
        }
    }
    violations
}

/// The steps preceding ordinal `j`, in order. Empty for the first step.
pub fn context_prefix(chain: &LogicalChain, ordinal: usize) -> Result<&[Step], ChainError> {
    if ordinal == 0 || ordinal > chain.len() {
        return Err(ChainError::OrdinalOutOfRange {
            ordinal,
            len: chain.len(),
        });
    }
    Ok(&chain.steps[..ordinal - 1])
}

/// Folds per-step verdicts into the solution-level judgment: the chain
/// passes iff every step passes, and the feedback set collects the wrong
/// steps' feedback in step order.
pub fn aggregate_verdicts(verdicts: &[StepVerdict]) -> Result<(bool, Vec<String>), ChainError> {
    if verdicts.is_empty() {
        return Err(ChainError::EmptyVerdicts);
    }
    let mut overall = true;
    let mut feedback_set = Vec::new();
    for verdict in verdicts {
        match (&verdict.validity, &verdict.feedback) {
            (Validity::Correct, None) => {}
            (Validity::Wrong, Some(feedback)) => {
                overall = false;
                feedback_set.push(feedback.clone());
            }
            (Validity::Correct, Some(_)) => {
                return Err(ChainError::VerdictInvariant {
                    index: verdict.index,
                    message: "correct verdict carries feedback".to_string(),
                });
            }
            (Validity::Wrong, None) => {
                return Err(ChainError::VerdictInvariant {
                    index: verdict.index,
                    message: "wrong verdict without feedback".to_string(),
                });
            }
        }
    }
    Ok((overall, feedback_set))
}

/// Serializes a chain into its canonical document form: fixed field order,
/// LF endings, escaped single-line values. The encoding is bijective on
/// valid chains, so `chain_from_canonical(chain_to_canonical(c)) == c`.
pub fn chain_to_canonical(chain: &LogicalChain) -> String {
    let mut out = String::new();
    textfmt::push_raw(&mut out, "format", CHAIN_FORMAT);
    textfmt::push_field(&mut out, "problem", &chain.problem_id);
    textfmt::push_raw(&mut out, "steps", chain.steps.len());
    for step in &chain.steps {
        out.push('\n');
        textfmt::push_raw(&mut out, "step", step.index);
        textfmt::push_field(&mut out, "principle", &step.principle);
        textfmt::push_field(&mut out, "derivation", &step.derivation);
    }
    out
}

/// Parses a canonical chain document, enforcing the declared step count,
/// contiguous 1-based indices and non-empty fields.
pub fn chain_from_canonical(text: &str) -> Result<LogicalChain, DocError> {
    let mut reader = DocReader::new(text);
    textfmt::expect_format(&mut reader, CHAIN_FORMAT)?;
    let problem_id = reader.expect_field("problem")?.value()?;
    let declared = reader.expect_field("steps")?.as_usize()?;

    let mut steps = Vec::with_capacity(declared);
    for expected in 1..=declared {
        let header = reader.expect_field("step").map_err(|e| DocError {
            line: e.line,
            message: format!("{} (expected step {expected} of {declared})", e.message),
        })?;
        let index = header.as_usize()?;
        if index != expected {
            return Err(DocError::at(
                header.line,
                format!("non-contiguous step index: expected {expected}, found {index}"),
            ));
        }
        let principle_field = reader.expect_field("principle").map_err(|e| DocError {
            line: e.line,
            message: format!("missing field `principle` in step {index}: {}", e.message),
        })?;
        let principle = principle_field.value()?;
        if principle.trim().is_empty() {
            return Err(DocError::at(
                principle_field.line,
                format!("empty field `principle` in step {index}"),
            ));
        }
        let derivation_field = reader.expect_field("derivation").map_err(|e| DocError {
            line: e.line,
            message: format!("missing field `derivation` in step {index}: {}", e.message),
        })?;
        let derivation = derivation_field.value()?;
        if derivation.trim().is_empty() {
            return Err(DocError::at(
                derivation_field.line,
                format!("empty field `derivation` in step {index}"),
            ));
        }
        steps.push(Step {
            index,
            principle,
            derivation,
        });
    }
    if let Some(extra) = reader.next_field()? {
        return Err(DocError::at(
            extra.line,
            format!("unexpected field `{}` after step {declared}", extra.key),
        ));
    }
    if steps.is_empty() {
        return Err(DocError::new("empty chain: document declares zero steps"));
    }
    Ok(LogicalChain { problem_id, steps })
}

/// Serializes a problem file. Attachment bytes live in the referenced files,
/// not in the document; paths are recorded relative to the document.
pub fn problem_to_document(problem: &RawProblem, attachment_paths: &[String]) -> String {
    let mut out = String::new();
    textfmt::push_raw(&mut out, "format", PROBLEM_FORMAT);
    textfmt::push_field(&mut out, "id", &problem.id);
    for (att, path) in problem.attachments.iter().zip(attachment_paths) {
        textfmt::push_raw(
            &mut out,
            "attachment",
            textfmt::encode_pair(path, &att.media_type),
        );
    }
    textfmt::push_field(&mut out, "statement", &problem.statement);
    out
}

/// Parses a problem file, returning the problem (attachments still to be
/// loaded) plus the attachment path list.
pub fn problem_from_document(text: &str) -> Result<(RawProblem, Vec<(String, String)>), DocError> {
    let mut reader = DocReader::new(text);
    textfmt::expect_format(&mut reader, PROBLEM_FORMAT)?;
    let id_field = reader.expect_field("id")?;
    let id = id_field.value()?;
    if id.trim().is_empty() {
        return Err(DocError::at(id_field.line, "empty problem id"));
    }

    let mut attachments = Vec::new();
    let mut statement = None;
    while let Some(field) = reader.next_field()? {
        match field.key {
            "attachment" => {
                attachments.push(textfmt::decode_pair(&field)?);
            }
            "statement" => {
                if statement.is_some() {
                    return Err(DocError::at(field.line, "duplicate `statement` field"));
                }
                statement = Some(field.value()?);
            }
            other => {
                return Err(DocError::at(
                    field.line,
                    format!("unexpected field `{other}` in problem file"),
                ));
            }
        }
    }
    let statement = statement.ok_or_else(|| DocError::new("missing `statement` field"))?;
    if statement.trim().is_empty() {
        return Err(DocError::new("empty problem statement"));
    }
    Ok((
        RawProblem {
            id,
            statement,
            attachments: Vec::new(),
        },
        attachments,
    ))
}
