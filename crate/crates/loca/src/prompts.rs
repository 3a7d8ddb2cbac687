//! Prompt templates.
//!
//! Each pipeline stage renders a named, versioned template. Built-in
//! defaults ship with the crate; a templates directory named in the config
//! overrides any of them by id (`<id>.txt`). Resolved template ids are
//! recorded in the session config snapshot.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::chain::{LogicalChain, Step, StructuredProblem};

pub const INTERPRET: &str = "interpret@1";
pub const INTERPRET_REPAIR: &str = "interpret-repair@1";
pub const AUGMENT_STRUCTURED: &str = "augment-structured@1";
pub const AUGMENT_GENERIC: &str = "augment-generic@1";
pub const AUGMENT_REPAIR: &str = "augment-repair@1";
pub const REFINE_STRUCTURED: &str = "refine-structured@1";
pub const REFINE_GENERIC: &str = "refine-generic@1";
pub const REVIEW_PRINCIPLE: &str = "review-principle@1";
pub const REVIEW_DERIVATION: &str = "review-derivation@1";
pub const REVIEW_PRINCIPLE_PLAIN: &str = "review-principle-plain@1";
pub const REVIEW_DERIVATION_PLAIN: &str = "review-derivation-plain@1";
pub const REVIEW_HOLISTIC_PRINCIPLE: &str = "review-holistic-principle@1";
pub const REVIEW_HOLISTIC_DERIVATION: &str = "review-holistic-derivation@1";
pub const REVIEW_HOLISTIC_PRINCIPLE_PLAIN: &str = "review-holistic-principle-plain@1";
pub const REVIEW_HOLISTIC_DERIVATION_PLAIN: &str = "review-holistic-derivation-plain@1";
pub const VERDICT_REPAIR: &str = "verdict-repair@1";
pub const SUMMARIZE: &str = "summarize@1";

/// Delimits the assumed-correct context block in review prompts. Tests use
/// these markers to assert context isolation from captured payloads.
pub const CONTEXT_HEADER: &str = "### Established context (assume correct)";
pub const STEP_UNDER_REVIEW_HEADER: &str = "### Step under review";

const BUILTINS: &[(&str, &str)] = &[
    (
        INTERPRET,
        "You are a scientific problem analyst. Read the problem statement below and \
reorganize everything it says into exactly five sections. Use these exact \
section headers, each alone on its own line:\n\
\n\
Physical System Description\n\
Variables and Parameters\n\
Initial Conditions\n\
Constraints and Assumptions\n\
Solution Objective\n\
\n\
Under \"Variables and Parameters\", list one entry per line in the form \
\"symbol: definition\". Under \"Solution Objective\", state one precise goal \
per sub-question, numbered in the order asked. Record every stated \
assumption, approximation and geometric relation under \"Constraints and \
Assumptions\". Do not solve the problem, do not omit a section, and do not \
add text outside the five sections.\n\
\n\
Problem statement:\n{statement}\n",
    ),
    (
        INTERPRET_REPAIR,
        "Your previous structured interpretation was rejected for these defects:\n\
{defects}\n\
\n\
Previous interpretation:\n{previous}\n\
\n\
Rewrite the complete interpretation, fixing every defect. Use the exact \
section headers \"Physical System Description\", \"Variables and \
Parameters\", \"Initial Conditions\", \"Constraints and Assumptions\" and \
\"Solution Objective\", each alone on its own line, with the content rules \
as before.\n\
\n\
Problem statement:\n{statement}\n",
    ),
    (
        AUGMENT_STRUCTURED,
        "Solve the problem described below. Write the complete solution as a \
numbered sequence of atomic steps. Each step must perform exactly one \
reasoning act and be written as:\n\
\n\
Step <n>\n\
Principle: <the physical law, mathematical theorem or definition the step rests on>\n\
Derivation: <how the principle applies here and the result it produces>\n\
\n\
If a step would combine several reasoning acts, split it into smaller \
steps until each is atomic. Number the steps consecutively starting at 1. \
Carry the reasoning through to the final answers for every objective. \
Output only the steps.\n\
\n\
Problem interpretation:\n{problem}\n",
    ),
    (
        AUGMENT_GENERIC,
        "Solve the following problem. Explain your reasoning and finish with the \
final answer to every question asked.\n\
\n\
{statement}\n",
    ),
    (
        AUGMENT_REPAIR,
        "Your previous output could not be accepted as a step sequence:\n\
{defects}\n\
\n\
Previous output:\n{previous}\n\
\n\
Re-emit the complete solution in the required format: repeated blocks of \
\"Step <n>\" followed by \"Principle:\" and \"Derivation:\" lines, numbered \
consecutively from 1, with both fields non-empty in every step.\n",
    ),
    (
        REFINE_STRUCTURED,
        "A reviewer examined your previous solution to this problem and reported \
the issues below. Rewrite the complete solution from scratch as a numbered \
sequence of atomic steps, each in the form:\n\
\n\
Step <n>\n\
Principle: <law, theorem or definition>\n\
Derivation: <application and result>\n\
\n\
Resolve every reported issue. Keep the parts of the reasoning that were \
not questioned, but re-state them in full; the new solution must stand on \
its own. Number the steps consecutively starting at 1 and output only the \
steps.\n\
\n\
Problem interpretation:\n{problem}\n\
\n\
Previous solution:\n{chain}\n\
\n\
Reviewer findings:\n{feedback}\n",
    ),
    (
        REFINE_GENERIC,
        "A reviewer examined your previous answer to this problem and reported the \
issues below. Write a complete new answer that resolves every issue. \
Explain your reasoning and finish with the final answer to every question.\n\
\n\
Problem:\n{statement}\n\
\n\
Previous answer:\n{chain}\n\
\n\
Reviewer findings:\n{feedback}\n",
    ),
    (
        REVIEW_PRINCIPLE,
        "You are a verification agent examining one step of a solution. Treat \
every statement in the established context as correct, even if you doubt \
it; your judgment applies to the step under review only.\n\
\n\
### Problem\n{problem}\n\
\n\
### Established context (assume correct)\n{context}\n\
\n\
### Step under review\n{step}\n\
\n\
### Task\n\
Judge only the stated principle: is it a correct law, theorem or \
definition, and is it applicable to this situation given the context? \
Ignore whether the derivation applies it correctly. Briefly explain your \
judgment, then end your reply with exactly one line reading\n\
VERDICT: CORRECT\n\
or\n\
VERDICT: WRONG\n",
    ),
    (
        REVIEW_DERIVATION,
        "You are a verification agent examining one step of a solution. Treat \
every statement in the established context as correct, even if you doubt \
it; your judgment applies to the step under review only.\n\
\n\
### Problem\n{problem}\n\
\n\
### Established context (assume correct)\n{context}\n\
\n\
### Step under review\n{step}\n\
\n\
### Task\n\
Assume the stated principle is valid. Judge only the derivation: does it \
apply the principle correctly, is the algebra and arithmetic sound, and \
does the claimed result actually follow? Briefly explain your judgment, \
then end your reply with exactly one line reading\n\
VERDICT: CORRECT\n\
or\n\
VERDICT: WRONG\n",
    ),
    (
        REVIEW_PRINCIPLE_PLAIN,
        "Check the reasoning below. The earlier part has already been verified; \
judge whether the new part rests on a sound basis.\n\
\n\
### Problem\n{problem}\n\
\n\
### Established context (assume correct)\n{context}\n\
\n\
### Step under review\n{step}\n\
\n\
Briefly explain, then end your reply with exactly one line reading\n\
VERDICT: CORRECT\n\
or\n\
VERDICT: WRONG\n",
    ),
    (
        REVIEW_DERIVATION_PLAIN,
        "Check the reasoning below. The earlier part has already been verified; \
judge whether the new part works out correctly.\n\
\n\
### Problem\n{problem}\n\
\n\
### Established context (assume correct)\n{context}\n\
\n\
### Step under review\n{step}\n\
\n\
Briefly explain, then end your reply with exactly one line reading\n\
VERDICT: CORRECT\n\
or\n\
VERDICT: WRONG\n",
    ),
    (
        REVIEW_HOLISTIC_PRINCIPLE,
        "You are a verification agent examining a complete solution. For every \
step, judge whether its stated principle is a correct and applicable law, \
theorem or definition.\n\
\n\
### Problem\n{problem}\n\
\n\
### Solution\n{chain}\n\
\n\
### Task\n\
If every step rests on a sound principle, end your reply with exactly one \
line reading VERDICT: CORRECT. Otherwise list each faulty step on its own \
line as \"Step <n>: WRONG - <reason>\" and end your reply with exactly one \
line reading VERDICT: WRONG.\n",
    ),
    (
        REVIEW_HOLISTIC_DERIVATION,
        "You are a verification agent examining a complete solution. For every \
step, judge whether its derivation applies the stated principle correctly \
and whether the claimed result follows.\n\
\n\
### Problem\n{problem}\n\
\n\
### Solution\n{chain}\n\
\n\
### Task\n\
If every derivation is sound, end your reply with exactly one line reading \
VERDICT: CORRECT. Otherwise list each faulty step on its own line as \
\"Step <n>: WRONG - <reason>\" and end your reply with exactly one line \
reading VERDICT: WRONG.\n",
    ),
    (
        REVIEW_HOLISTIC_PRINCIPLE_PLAIN,
        "Review the complete solution below for correctness of its underlying \
reasoning.\n\
\n\
### Problem\n{problem}\n\
\n\
### Solution\n{chain}\n\
\n\
If it is sound, end your reply with exactly one line reading VERDICT: \
CORRECT. Otherwise list each faulty step as \"Step <n>: WRONG - <reason>\" \
and end with VERDICT: WRONG.\n",
    ),
    (
        REVIEW_HOLISTIC_DERIVATION_PLAIN,
        "Review the complete solution below for correctness of its calculations \
and conclusions.\n\
\n\
### Problem\n{problem}\n\
\n\
### Solution\n{chain}\n\
\n\
If it is sound, end your reply with exactly one line reading VERDICT: \
CORRECT. Otherwise list each faulty step as \"Step <n>: WRONG - <reason>\" \
and end with VERDICT: WRONG.\n",
    ),
    (
        VERDICT_REPAIR,
        "Your previous reply did not end with the required marker line. Restate \
your brief justification, then end your reply with exactly one line \
reading \"VERDICT: CORRECT\" or \"VERDICT: WRONG\".\n\
\n\
Previous reply:\n{previous}\n",
    ),
    (
        SUMMARIZE,
        "Condense the reviewer findings below into a short, actionable list for \
the author who will rewrite the solution. Keep the step references, merge \
duplicate complaints, and do not add new criticism of your own.\n\
\n\
Findings:\n{feedback}\n",
    ),
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template id `{0}`")]
    Unknown(String),
    #[error("cannot read templates directory {path}: {message}")]
    Io { path: String, message: String },
}

/// Named templates with `{placeholder}` substitution.
pub struct TemplateStore {
    templates: HashMap<String, String>,
}

impl TemplateStore {
    /// The built-in templates only.
    pub fn builtin() -> Self {
        Self {
            templates: BUILTINS
                .iter()
                .map(|(id, text)| (id.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Built-ins plus overrides from `<dir>/<id>.txt` files.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut store = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| TemplateError::Io {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            store.templates.insert(id.to_string(), text);
        }
        Ok(store)
    }

    /// Renders a template, substituting each `{name}` placeholder.
    pub fn render(&self, id: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let template = self
            .templates
            .get(id)
            .ok_or_else(|| TemplateError::Unknown(id.to_string()))?;
        let mut text = template.clone();
        for (name, value) in vars {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        Ok(text)
    }
}

/// Renders a structured problem in its five-header display form, as used in
/// prompts and in the session's human-readable reports.
pub fn render_problem(problem: &StructuredProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Physical System Description");
    let _ = writeln!(out, "{}", problem.system_description.trim_end());
    let _ = writeln!(out, "\nVariables and Parameters");
    if problem.variables.is_empty() {
        let _ = writeln!(out, "(none)");
    }
    for var in &problem.variables {
        if var.symbol.is_empty() {
            let _ = writeln!(out, "{}", var.definition);
        } else {
            let _ = writeln!(out, "{}: {}", var.symbol, var.definition);
        }
    }
    let _ = writeln!(out, "\nInitial Conditions");
    for item in &problem.initial_conditions {
        let _ = writeln!(out, "- {item}");
    }
    let _ = writeln!(out, "\nConstraints and Assumptions");
    for item in &problem.constraints_assumptions {
        let _ = writeln!(out, "- {item}");
    }
    let _ = writeln!(out, "\nSolution Objective");
    for (i, item) in problem.objectives.iter().enumerate() {
        let _ = writeln!(out, "{}. {item}", i + 1);
    }
    out
}

/// Renders one step in the block form prompts expect.
pub fn render_step(step: &Step) -> String {
    format!(
        "Step {}\nPrinciple: {}\nDerivation: {}",
        step.index, step.principle, step.derivation
    )
}

/// Renders context steps for review prompts; `(none)` for the first step.
pub fn render_context(steps: &[Step]) -> String {
    if steps.is_empty() {
        return "(none)".to_string();
    }
    steps
        .iter()
        .map(render_step)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Renders a full chain in the block form.
pub fn render_chain(chain: &LogicalChain) -> String {
    chain
        .steps
        .iter()
        .map(render_step)
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_render_their_placeholders() {
        let store = TemplateStore::builtin();
        let text = store
            .render(INTERPRET, &[("statement", "A ball falls.")])
            .unwrap();
        assert!(text.contains("A ball falls."));
        assert!(!text.contains("{statement}"));
    }

    #[test]
    fn review_templates_carry_the_context_delimiters() {
        let store = TemplateStore::builtin();
        for id in [
            REVIEW_PRINCIPLE,
            REVIEW_DERIVATION,
            REVIEW_PRINCIPLE_PLAIN,
            REVIEW_DERIVATION_PLAIN,
        ] {
            let text = store
                .render(id, &[("problem", "p"), ("context", "c"), ("step", "s")])
                .unwrap();
            let ctx_pos = text.find(CONTEXT_HEADER).expect("context header");
            let step_pos = text.find(STEP_UNDER_REVIEW_HEADER).expect("step header");
            assert!(ctx_pos < step_pos, "{id}: context must precede the step");
        }
    }

    #[test]
    fn unknown_template_is_an_error() {
        let store = TemplateStore::builtin();
        assert!(store.render("nope@9", &[]).is_err());
    }

    #[test]
    fn directory_overrides_replace_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("interpret@1.txt"), "custom {statement}").unwrap();
        let store = TemplateStore::with_overrides(dir.path()).unwrap();
        assert_eq!(
            store.render(INTERPRET, &[("statement", "S")]).unwrap(),
            "custom S"
        );
        // untouched ids still come from the builtins
        assert!(store
            .render(SUMMARIZE, &[("feedback", "f")])
            .unwrap()
            .contains("Condense"));
    }

    #[test]
    fn render_context_handles_empty_prefix() {
        assert_eq!(render_context(&[]), "(none)");
    }
}
