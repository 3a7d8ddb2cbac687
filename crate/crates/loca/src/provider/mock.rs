//! Scripted provider: deterministic canned responses for tests and offline
//! runs, selected by request tag and per-tag call count.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::textfmt::{self, DocError, DocReader};

use super::{ChatRequest, ChatResponse, FinishReason, Provider, ProviderError, Usage};

/// Version header of the script file format.
pub const SCRIPT_FORMAT: &str = "loca-script/1";

/// Call-count predicate for a rule, evaluated against the number of calls
/// seen so far for the request's exact tag (including the current one).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallCount {
    Any,
    Exactly(u32),
    AtLeast(u32),
}

impl CallCount {
    fn matches(&self, count: u32) -> bool {
        match self {
            CallCount::Any => true,
            CallCount::Exactly(n) => count == *n,
            CallCount::AtLeast(n) => count >= *n,
        }
    }
}

/// What a matched rule does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptAction {
    /// Return this text as the completion.
    Reply(String),
    /// Fail with the named provider error kind: `timeout`, `rate-limited`,
    /// `auth`, or `malformed`.
    Fail(String),
}

/// One script rule: a tag pattern (`*` wildcards allowed), a call-count
/// predicate, and the action to take.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRule {
    pub tag_pattern: String,
    pub calls: CallCount,
    pub action: ScriptAction,
}

impl ScriptRule {
    pub fn reply(tag_pattern: impl Into<String>, calls: CallCount, text: impl Into<String>) -> Self {
        Self {
            tag_pattern: tag_pattern.into(),
            calls,
            action: ScriptAction::Reply(text.into()),
        }
    }

    pub fn fail(tag_pattern: impl Into<String>, calls: CallCount, kind: impl Into<String>) -> Self {
        Self {
            tag_pattern: tag_pattern.into(),
            calls,
            action: ScriptAction::Fail(kind.into()),
        }
    }
}

/// Matches a pattern with `*` wildcards against a tag.
fn pattern_matches(pattern: &str, tag: &str) -> bool {
    fn matches(p: &[u8], t: &[u8]) -> bool {
        match (p.first(), t.first()) {
            (None, None) => true,
            (Some(b'*'), _) => matches(&p[1..], t) || (!t.is_empty() && matches(p, &t[1..])),
            (Some(pc), Some(tc)) if pc == tc => matches(&p[1..], &t[1..]),
            _ => false,
        }
    }
    matches(pattern.as_bytes(), tag.as_bytes())
}

/// Deterministic mock provider. Responses are a pure function of
/// `(request_tag, per-tag call count)`; every handled request is recorded
/// so tests can assert on captured payloads.
pub struct ScriptedProvider {
    rules: Vec<ScriptRule>,
    state: Mutex<ScriptState>,
}

#[derive(Default)]
struct ScriptState {
    tag_counts: HashMap<String, u32>,
    calls: Vec<ChatRequest>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules,
            state: Mutex::new(ScriptState::default()),
        }
    }

    /// Every request this provider has handled, in call order.
    pub fn recorded_requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("script state poisoned").calls.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("script state poisoned").calls.len()
    }

    /// Parses a `loca-script/1` document into rules.
    ///
    /// Each record is a `rule:` line `pattern | count | action` where count
    /// is `*`, `N`, or `N+` and action is `reply` (followed by a `text:`
    /// field) or `fail <kind>`.
    pub fn parse_script(text: &str) -> Result<Vec<ScriptRule>, DocError> {
        let mut reader = DocReader::new(text);
        textfmt::expect_format(&mut reader, SCRIPT_FORMAT)?;
        let mut rules = Vec::new();
        while let Some(field) = reader.next_field()? {
            if field.key != "rule" {
                return Err(DocError::at(
                    field.line,
                    format!("expected `rule` field, found `{}`", field.key),
                ));
            }
            let value = field.value()?;
            let mut parts = value.splitn(3, '|').map(str::trim);
            let (pattern, count, action) = match (parts.next(), parts.next(), parts.next()) {
                (Some(p), Some(c), Some(a)) if !p.is_empty() => (p, c, a),
                _ => {
                    return Err(DocError::at(
                        field.line,
                        "rule must be `pattern | count | action`",
                    ))
                }
            };
            let calls = if count == "*" {
                CallCount::Any
            } else if let Some(n) = count.strip_suffix('+') {
                CallCount::AtLeast(n.parse().map_err(|_| {
                    DocError::at(field.line, format!("bad call count `{count}`"))
                })?)
            } else {
                CallCount::Exactly(count.parse().map_err(|_| {
                    DocError::at(field.line, format!("bad call count `{count}`"))
                })?)
            };
            let action = if action == "reply" {
                let text_field = reader.expect_field("text")?;
                ScriptAction::Reply(text_field.value()?)
            } else if let Some(kind) = action.strip_prefix("fail") {
                let kind = kind.trim();
                match kind {
                    "timeout" | "rate-limited" | "auth" | "malformed" => {
                        ScriptAction::Fail(kind.to_string())
                    }
                    other => {
                        return Err(DocError::at(
                            field.line,
                            format!("unknown failure kind `{other}`"),
                        ))
                    }
                }
            } else {
                return Err(DocError::at(
                    field.line,
                    format!("unknown action `{action}`"),
                ));
            };
            rules.push(ScriptRule {
                tag_pattern: pattern.to_string(),
                calls,
                action,
            });
        }
        if rules.is_empty() {
            return Err(DocError::new("script has no rules"));
        }
        Ok(rules)
    }

    /// Serializes rules back into the script document form.
    pub fn script_to_document(rules: &[ScriptRule]) -> String {
        let mut out = String::new();
        textfmt::push_raw(&mut out, "format", SCRIPT_FORMAT);
        for rule in rules {
            out.push('\n');
            let count = match rule.calls {
                CallCount::Any => "*".to_string(),
                CallCount::Exactly(n) => n.to_string(),
                CallCount::AtLeast(n) => format!("{n}+"),
            };
            let action = match &rule.action {
                ScriptAction::Reply(_) => "reply".to_string(),
                ScriptAction::Fail(kind) => format!("fail {kind}"),
            };
            textfmt::push_field(
                &mut out,
                "rule",
                &format!("{} | {count} | {action}", rule.tag_pattern),
            );
            if let ScriptAction::Reply(text) = &rule.action {
                textfmt::push_field(&mut out, "text", text);
            }
        }
        out
    }
}

/// Deterministic token estimate so scripted traces have non-trivial usage
/// numbers without any randomness.
fn estimate_tokens(text_len: usize) -> u64 {
    (text_len as u64).div_ceil(4)
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let mut state = self.state.lock().expect("script state poisoned");
        let count = state
            .tag_counts
            .entry(request.request_tag.clone())
            .and_modify(|c| *c += 1)
            .or_insert(1)
            .to_owned();
        state.calls.push(request.clone());
        drop(state);

        let rule = self
            .rules
            .iter()
            .find(|r| pattern_matches(&r.tag_pattern, &request.request_tag) && r.calls.matches(count))
            .ok_or_else(|| ProviderError::UnscriptedRequest {
                tag: request.request_tag.clone(),
            })?;

        match &rule.action {
            ScriptAction::Reply(text) => {
                let prompt_len: usize = request.messages.iter().map(|m| m.content.len()).sum();
                Ok(ChatResponse {
                    text: text.clone(),
                    finish_reason: FinishReason::Stop,
                    usage: Usage {
                        prompt_tokens: estimate_tokens(prompt_len),
                        completion_tokens: estimate_tokens(text.len()),
                    },
                    latency_ms: 0,
                })
            }
            ScriptAction::Fail(kind) => Err(match kind.as_str() {
                "timeout" => ProviderError::Timeout {
                    tag: request.request_tag.clone(),
                },
                "rate-limited" => ProviderError::RateLimited {
                    tag: request.request_tag.clone(),
                    attempts: 1,
                },
                "auth" => ProviderError::AuthFailure {
                    tag: request.request_tag.clone(),
                    message: "scripted auth failure".to_string(),
                },
                _ => ProviderError::MalformedResponse {
                    tag: request.request_tag.clone(),
                    message: "scripted malformed response".to_string(),
                },
            }),
        }
    }
}
