//! Problem interpretation: one provider exchange turns the raw statement
//! into the five-section structured form, with a tolerant section parser
//! and a bounded repair loop on defective output.

use std::fmt;

use thiserror::Error;

use crate::chain::{RawProblem, StructuredProblem, Variable};
use crate::config::StageParams;
use crate::prompts::{self, TemplateStore};
use crate::provider::{ChatRequest, ImagePart, Message, Provider, ProviderError};
use crate::textfmt::{self, DocError, DocReader};

/// Version header of the persisted interpretation document.
pub const INTERPRETATION_FORMAT: &str = "loca-interpretation/1";

/// The five section headers, in canonical order.
pub const SECTION_HEADERS: [&str; 5] = [
    "Physical System Description",
    "Variables and Parameters",
    "Initial Conditions",
    "Constraints and Assumptions",
    "Solution Objective",
];

/// A problem a section parser found with the text. Defects are data for the
/// repair loop, not faults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SectionDefect {
    Missing(String),
    Duplicate(String),
    Empty(String),
}

impl fmt::Display for SectionDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SectionDefect::Missing(s) => write!(f, "missing section \"{s}\""),
            SectionDefect::Duplicate(s) => write!(f, "duplicate section \"{s}\""),
            SectionDefect::Empty(s) => write!(f, "empty section \"{s}\""),
        }
    }
}

#[derive(Debug, Error)]
pub enum InterpreterError {
    #[error("interpretation failed after {calls} provider calls; unresolved defects: {}", format_defects(.defects))]
    InterpretationFailed {
        calls: u32,
        defects: Vec<SectionDefect>,
        last_response: String,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] crate::prompts::TemplateError),
}

fn format_defects(defects: &[SectionDefect]) -> String {
    defects
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Normalizes a candidate header line: markdown decoration, numbering and
/// trailing punctuation are stripped and the result lowercased.
fn normalize_header(line: &str) -> String {
    let mut s = line.trim();
    while let Some(rest) = s
        .strip_prefix('#')
        .or_else(|| s.strip_prefix('*'))
        .or_else(|| s.strip_prefix('_'))
        .or_else(|| s.strip_prefix('-'))
    {
        s = rest.trim_start();
    }
    // strip a leading "1." / "2)" style ordinal
    if let Some(pos) = s.find(['.', ')']) {
        if s[..pos].chars().all(|c| c.is_ascii_digit()) && pos > 0 && pos <= 2 {
            s = s[pos + 1..].trim_start();
        }
    }
    let mut t = s.trim_end();
    while let Some(rest) = t
        .strip_suffix(':')
        .or_else(|| t.strip_suffix('*'))
        .or_else(|| t.strip_suffix('_'))
        .or_else(|| t.strip_suffix('#'))
    {
        t = rest.trim_end();
    }
    t.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn header_index(line: &str) -> Option<usize> {
    let normalized = normalize_header(line);
    SECTION_HEADERS
        .iter()
        .position(|h| h.to_lowercase() == normalized)
}

/// Splits a section body into list items. Bullet or enumeration markers
/// start items and unmarked lines continue the current one; a body without
/// markers becomes a single item.
fn split_items(body: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    let mut has_markers = false;
    for line in body.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = strip_item_marker(trimmed) {
            has_markers = true;
            items.push(rest.to_string());
        } else if has_markers {
            match items.last_mut() {
                Some(last) => {
                    last.push(' ');
                    last.push_str(trimmed);
                }
                None => items.push(trimmed.to_string()),
            }
        } else {
            items.push(trimmed.to_string());
        }
    }
    if !has_markers {
        let joined = items.join(" ");
        if joined.is_empty() {
            return Vec::new();
        }
        return vec![joined];
    }
    items.retain(|i| !i.is_empty());
    items
}

fn strip_item_marker(line: &str) -> Option<&str> {
    for marker in ["- ", "* ", "+ ", "• "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return Some(rest.trim_start());
        }
    }
    // "1." / "1)" / "(1)" / "a)" enumerations
    let bytes = line.as_bytes();
    let mut i = 0;
    if i < bytes.len() && bytes[i] == b'(' {
        i += 1;
    }
    let start = i;
    while i < bytes.len() && (bytes[i].is_ascii_digit() || (i == start && bytes[i].is_ascii_lowercase())) {
        i += 1;
        if i - start > 3 {
            return None;
        }
    }
    if i == start {
        return None;
    }
    if i < bytes.len() && (bytes[i] == b'.' || bytes[i] == b')') {
        let rest = &line[i + 1..];
        if rest.starts_with(' ') || rest.is_empty() {
            return Some(rest.trim_start());
        }
    }
    None
}

fn parse_variables(body: &str) -> Vec<Variable> {
    let mut variables = Vec::new();
    for line in body.lines() {
        let trimmed = strip_item_marker(line.trim()).unwrap_or_else(|| line.trim());
        if trimmed.is_empty() {
            continue;
        }
        match trimmed.split_once(':') {
            Some((symbol, definition)) if !symbol.trim().is_empty() => variables.push(Variable {
                symbol: symbol.trim().to_string(),
                definition: definition.trim().to_string(),
            }),
            _ => variables.push(Variable {
                symbol: String::new(),
                definition: trimmed.to_string(),
            }),
        }
    }
    variables
}

/// Parses free text against the five-section schema. Total on arbitrary
/// input: either every section is present exactly once with content, or the
/// full defect list comes back for the repair loop. Header order does not
/// matter; content between two headers belongs to the first.
pub fn parse_structured(text: &str) -> Result<StructuredProblem, Vec<SectionDefect>> {
    let mut bodies: [Option<String>; 5] = Default::default();
    let mut defects = Vec::new();
    let mut current: Option<usize> = None;

    for line in text.lines() {
        if let Some(index) = header_index(line) {
            if bodies[index].is_some() {
                defects.push(SectionDefect::Duplicate(SECTION_HEADERS[index].to_string()));
                // keep appending to the first occurrence
                current = Some(index);
                continue;
            }
            bodies[index] = Some(String::new());
            current = Some(index);
            continue;
        }
        if let Some(index) = current {
            if let Some(body) = bodies[index].as_mut() {
                body.push_str(line);
                body.push('\n');
            }
        }
    }

    for (index, body) in bodies.iter().enumerate() {
        match body {
            None => defects.push(SectionDefect::Missing(SECTION_HEADERS[index].to_string())),
            Some(b) if b.trim().is_empty() => {
                defects.push(SectionDefect::Empty(SECTION_HEADERS[index].to_string()))
            }
            Some(_) => {}
        }
    }
    if !defects.is_empty() {
        return Err(defects);
    }

    let body = |i: usize| bodies[i].as_deref().unwrap_or("").trim().to_string();
    let objectives = split_items(&body(4));
    if objectives.is_empty() {
        return Err(vec![SectionDefect::Empty(SECTION_HEADERS[4].to_string())]);
    }
    Ok(StructuredProblem {
        system_description: body(0),
        variables: parse_variables(&body(1)),
        initial_conditions: split_items(&body(2)),
        constraints_assumptions: split_items(&body(3)),
        objectives,
    })
}

/// Runs the interpretation stage: one exchange plus up to `repairs` repair
/// exchanges that echo the defect list back. At most `1 + repairs` provider
/// calls are made.
pub fn interpret(
    problem: &RawProblem,
    provider: &dyn Provider,
    templates: &TemplateStore,
    params: &StageParams,
    repairs: u32,
) -> Result<StructuredProblem, InterpreterError> {
    let images: Vec<ImagePart> = problem
        .attachments
        .iter()
        .map(|a| ImagePart {
            media_type: a.media_type.clone(),
            bytes: a.bytes.clone(),
        })
        .collect();
    let mut prompt = templates.render(prompts::INTERPRET, &[("statement", &problem.statement)])?;
    let mut calls = 0u32;
    loop {
        calls += 1;
        let request = ChatRequest {
            model_id: params.model_id.clone(),
            messages: vec![Message {
                role: crate::provider::Role::User,
                content: prompt.clone(),
                images: images.clone(),
            }],
            temperature: params.temperature,
            max_output_tokens: params.max_output_tokens,
            request_tag: "interpret".to_string(),
        };
        let response = provider.complete(&request)?;
        match parse_structured(&response.text) {
            Ok(structured) => return Ok(structured),
            Err(defects) => {
                if calls > repairs {
                    return Err(InterpreterError::InterpretationFailed {
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
                prompt = templates.render(
                    prompts::INTERPRET_REPAIR,
                    &[
                        ("defects", defect_lines.as_str()),
                        ("previous", response.text.as_str()),
                        ("statement", problem.statement.as_str()),
                    ],
                )?;
            }
        }
    }
}

/// Serializes the interpretation for the session directory.
pub fn structured_to_document(problem: &StructuredProblem) -> String {
    let mut out = String::new();
    textfmt::push_raw(&mut out, "format", INTERPRETATION_FORMAT);
    textfmt::push_field(&mut out, "system", &problem.system_description);
    for v in &problem.variables {
        textfmt::push_raw(
            &mut out,
            "variable",
            textfmt::encode_pair(&v.symbol, &v.definition),
        );
    }
    for item in &problem.initial_conditions {
        textfmt::push_field(&mut out, "initial", item);
    }
    for item in &problem.constraints_assumptions {
        textfmt::push_field(&mut out, "constraint", item);
    }
    for item in &problem.objectives {
        textfmt::push_field(&mut out, "objective", item);
    }
    out
}

/// Parses a persisted interpretation document.
pub fn structured_from_document(text: &str) -> Result<StructuredProblem, DocError> {
    let mut reader = DocReader::new(text);
    textfmt::expect_format(&mut reader, INTERPRETATION_FORMAT)?;
    let system = reader.expect_field("system")?.value()?;
    let mut variables = Vec::new();
    let mut initial_conditions = Vec::new();
    let mut constraints = Vec::new();
    let mut objectives = Vec::new();
    while let Some(field) = reader.next_field()? {
        match field.key {
            "variable" => {
                let (symbol, definition) = textfmt::decode_pair(&field)?;
                variables.push(Variable { symbol, definition });
            }
            "initial" => initial_conditions.push(field.value()?),
            "constraint" => constraints.push(field.value()?),
            "objective" => objectives.push(field.value()?),
            other => {
                return Err(DocError::at(
                    field.line,
                    format!("unexpected field `{other}` in interpretation"),
                ))
            }
        }
    }
    if objectives.is_empty() {
        return Err(DocError::new("interpretation has no objectives"));
    }
    Ok(StructuredProblem {
        system_description: system,
        variables,
        initial_conditions,
        constraints_assumptions: constraints,
        objectives,
    })
}
