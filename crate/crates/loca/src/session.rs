//! Session persistence: the on-disk layout of one solve run and the
//! append-only exchange log.
//!
//! Layout under the session directory:
//!
//! ```text
//! config            engine config snapshot (TOML, loca-config/1)
//! problem           the problem being solved (loca-problem/1)
//! interpretation    structured problem (loca-interpretation/1), when enabled
//! iter-<n>/chain    chain of iteration n (loca-chain/1)
//! iter-<n>/report   review report (loca-report/1)
//! iter-<n>/summary  feedback summary (loca-summary/1), when refinement ran
//! exchanges.log     every provider exchange (loca-exchanges/1)
//! ```
//!
//! The layout is a compatibility contract: resume and the replay/score
//! commands read it back.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::chain::{FeedbackSummary, ReviewMode, ReviewReport, StepVerdict};
use crate::provider::{ChatRequest, ChatResponse, Provider, ProviderError};
use crate::textfmt::{self, DocError, DocReader};

pub const REPORT_FORMAT: &str = "loca-report/1";
pub const SUMMARY_FORMAT: &str = "loca-summary/1";
pub const EXCHANGES_FORMAT: &str = "loca-exchanges/1";

/// Timestamp source for trace entries. The logical clock makes scripted
/// runs byte-identical; the system clock records wall-clock milliseconds.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Monotone counter: deterministic and still wall-clock ordered.
#[derive(Default)]
pub struct LogicalClock(AtomicU64);

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

/// One recorded provider exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeRecord {
    pub seq: u64,
    pub at_ms: u64,
    pub tag: String,
    pub fingerprint: String,
    pub model_id: String,
    pub response: ChatResponse,
}

/// Well-known file names inside a session directory.
#[derive(Debug, Clone)]
pub struct SessionPaths {
    pub root: PathBuf,
}

impl SessionPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config")
    }

    pub fn problem(&self) -> PathBuf {
        self.root.join("problem")
    }

    pub fn interpretation(&self) -> PathBuf {
        self.root.join("interpretation")
    }

    pub fn exchanges(&self) -> PathBuf {
        self.root.join("exchanges.log")
    }

    pub fn iter_dir(&self, n: u32) -> PathBuf {
        self.root.join(format!("iter-{n}"))
    }

    pub fn chain(&self, n: u32) -> PathBuf {
        self.iter_dir(n).join("chain")
    }

    pub fn report(&self, n: u32) -> PathBuf {
        self.iter_dir(n).join("report")
    }

    pub fn summary(&self, n: u32) -> PathBuf {
        self.iter_dir(n).join("summary")
    }
}

/// Append-only exchange log bound to one session.
pub struct ExchangeLog {
    path: PathBuf,
    clock: Box<dyn Clock>,
    state: Mutex<LogState>,
}

struct LogState {
    seq: u64,
    records: Vec<ExchangeRecord>,
}

impl ExchangeLog {
    /// Creates a fresh log file with its format header.
    pub fn create(path: impl Into<PathBuf>, clock: Box<dyn Clock>) -> std::io::Result<Self> {
        let path = path.into();
        let mut header = String::new();
        textfmt::push_raw(&mut header, "format", EXCHANGES_FORMAT);
        std::fs::write(&path, header)?;
        Ok(Self {
            path,
            clock,
            state: Mutex::new(LogState {
                seq: 0,
                records: Vec::new(),
            }),
        })
    }

    /// Reopens an existing log for appending, continuing the sequence.
    pub fn reopen(path: impl Into<PathBuf>, clock: Box<dyn Clock>) -> Result<Self, DocError> {
        let path = path.into();
        let text = std::fs::read_to_string(&path)
            .map_err(|e| DocError::new(format!("cannot read {}: {e}", path.display())))?;
        let records = parse_exchange_log(&text)?;
        let seq = records.last().map(|r| r.seq).unwrap_or(0);
        Ok(Self {
            path,
            clock,
            state: Mutex::new(LogState { seq, records }),
        })
    }

    pub fn append(
        &self,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<ExchangeRecord, std::io::Error> {
        let mut state = self.state.lock().expect("exchange log poisoned");
        state.seq += 1;
        let record = ExchangeRecord {
            seq: state.seq,
            at_ms: self.clock.now_ms(),
            tag: request.request_tag.clone(),
            fingerprint: request.fingerprint(),
            model_id: request.model_id.clone(),
            response: response.clone(),
        };
        let mut text = String::from("\n");
        textfmt::push_raw(&mut text, "exchange", record.seq);
        textfmt::push_raw(&mut text, "at", record.at_ms);
        textfmt::push_field(&mut text, "tag", &record.tag);
        textfmt::push_field(&mut text, "fingerprint", &record.fingerprint);
        textfmt::push_field(&mut text, "model", &record.model_id);
        textfmt::push_raw(&mut text, "finish", record.response.finish_reason.as_str());
        textfmt::push_raw(&mut text, "prompt_tokens", record.response.usage.prompt_tokens);
        textfmt::push_raw(
            &mut text,
            "completion_tokens",
            record.response.usage.completion_tokens,
        );
        textfmt::push_raw(&mut text, "latency_ms", record.response.latency_ms);
        textfmt::push_field(&mut text, "response", &record.response.text);
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new().append(true).open(&self.path)?;
        file.write_all(text.as_bytes())?;
        state.records.push(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> Vec<ExchangeRecord> {
        self.state.lock().expect("exchange log poisoned").records.clone()
    }
}

/// Parses an exchange log document.
pub fn parse_exchange_log(text: &str) -> Result<Vec<ExchangeRecord>, DocError> {
    let mut reader = DocReader::new(text);
    textfmt::expect_format(&mut reader, EXCHANGES_FORMAT)?;
    let mut records = Vec::new();
    while let Some(field) = reader.next_field()? {
        if field.key != "exchange" {
            return Err(DocError::at(
                field.line,
                format!("expected `exchange` field, found `{}`", field.key),
            ));
        }
        let seq = field.as_usize()? as u64;
        let at_ms = reader.expect_field("at")?.as_usize()? as u64;
        let tag = reader.expect_field("tag")?.value()?;
        let fingerprint = reader.expect_field("fingerprint")?.value()?;
        let model_id = reader.expect_field("model")?.value()?;
        let finish = reader.expect_field("finish")?.value()?;
        let prompt_tokens = reader.expect_field("prompt_tokens")?.as_usize()? as u64;
        let completion_tokens = reader.expect_field("completion_tokens")?.as_usize()? as u64;
        let latency_ms = reader.expect_field("latency_ms")?.as_usize()? as u64;
        let response_text = reader.expect_field("response")?.value()?;
        records.push(ExchangeRecord {
            seq,
            at_ms,
            tag,
            fingerprint,
            model_id,
            response: ChatResponse {
                text: response_text,
                finish_reason: crate::provider::FinishReason::parse(&finish),
                usage: crate::provider::Usage {
                    prompt_tokens,
                    completion_tokens,
                },
                latency_ms,
            },
        });
    }
    Ok(records)
}

/// Provider wrapper that appends every successful exchange to the session's
/// log. Failures propagate untouched; they surface through the stage error.
pub struct TracingProvider<'a> {
    pub inner: &'a dyn Provider,
    pub log: &'a ExchangeLog,
}

impl Provider for TracingProvider<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        self.log
            .append(request, &response)
            .map_err(|e| ProviderError::Storage {
                tag: request.request_tag.clone(),
                message: format!("cannot append exchange: {e}"),
            })?;
        Ok(response)
    }
}

/// Serializes a review report for the session directory.
pub fn report_to_document(report: &ReviewReport) -> String {
    let mut out = String::new();
    textfmt::push_raw(&mut out, "format", REPORT_FORMAT);
    textfmt::push_raw(&mut out, "mode", report.mode.as_str());
    textfmt::push_raw(&mut out, "overall", report.overall);
    textfmt::push_raw(&mut out, "verdicts", report.verdicts.len());
    for verdict in &report.verdicts {
        out.push('\n');
        textfmt::push_raw(&mut out, "verdict", verdict.index);
        textfmt::push_raw(
            &mut out,
            "validity",
            if verdict.is_correct() { "correct" } else { "wrong" },
        );
        textfmt::push_raw(&mut out, "principle_ok", verdict.principle_ok);
        textfmt::push_raw(&mut out, "derivation_ok", verdict.derivation_ok);
        if let Some(feedback) = &verdict.feedback {
            textfmt::push_field(&mut out, "feedback", feedback);
        }
    }
    out
}

/// Parses a review report, re-deriving and cross-checking the aggregates.
pub fn report_from_document(text: &str) -> Result<ReviewReport, DocError> {
    let mut reader = DocReader::new(text);
    textfmt::expect_format(&mut reader, REPORT_FORMAT)?;
    let mode_field = reader.expect_field("mode")?;
    let mode = match mode_field.raw_value {
        "atomic" => ReviewMode::Atomic,
        "holistic" => ReviewMode::Holistic,
        other => {
            return Err(DocError::at(
                mode_field.line,
                format!("unknown review mode `{other}`"),
            ))
        }
    };
    let stored_overall = reader.expect_field("overall")?.as_bool()?;
    let declared = reader.expect_field("verdicts")?.as_usize()?;
    let mut verdicts = Vec::with_capacity(declared);
    for _ in 0..declared {
        let index = reader.expect_field("verdict")?.as_usize()?;
        let validity_field = reader.expect_field("validity")?;
        let validity = validity_field.raw_value;
        let principle_ok = reader.expect_field("principle_ok")?.as_bool()?;
        let derivation_ok = reader.expect_field("derivation_ok")?.as_bool()?;
        let verdict = match validity {
            "correct" => {
                if !(principle_ok && derivation_ok) {
                    return Err(DocError::at(
                        validity_field.line,
                        format!("verdict {index}: correct but a check flag is false"),
                    ));
                }
                StepVerdict::correct(index)
            }
            "wrong" => {
                let feedback_field = reader.expect_field("feedback")?;
                let feedback = feedback_field.value()?;
                StepVerdict::wrong(index, principle_ok, derivation_ok, feedback).map_err(|e| {
                    DocError::at(feedback_field.line, e.to_string())
                })?
            }
            other => {
                return Err(DocError::at(
                    validity_field.line,
                    format!("unknown validity `{other}`"),
                ))
            }
        };
        verdicts.push(verdict);
    }
    if let Some(extra) = reader.next_field()? {
        return Err(DocError::at(
            extra.line,
            format!("unexpected field `{}` after last verdict", extra.key),
        ));
    }
    let (overall, feedback_set) = crate::chain::aggregate_verdicts(&verdicts)
        .map_err(|e| DocError::new(e.to_string()))?;
    if overall != stored_overall {
        return Err(DocError::new(format!(
            "stored overall={stored_overall} disagrees with verdicts (computed {overall})"
        )));
    }
    Ok(ReviewReport {
        mode,
        verdicts,
        overall,
        feedback_set,
    })
}

/// Serializes a feedback summary.
pub fn summary_to_document(summary: &FeedbackSummary) -> String {
    let mut out = String::new();
    textfmt::push_raw(&mut out, "format", SUMMARY_FORMAT);
    let sources = summary
        .source_indices
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    textfmt::push_raw(&mut out, "sources", sources);
    textfmt::push_field(&mut out, "text", &summary.text);
    out
}

/// Parses a feedback summary document.
pub fn summary_from_document(text: &str) -> Result<FeedbackSummary, DocError> {
    let mut reader = DocReader::new(text);
    textfmt::expect_format(&mut reader, SUMMARY_FORMAT)?;
    let sources_field = reader.expect_field("sources")?;
    let mut source_indices = Vec::new();
    for token in sources_field.raw_value.split_whitespace() {
        source_indices.push(token.parse().map_err(|_| {
            DocError::at(sources_field.line, format!("bad source index `{token}`"))
        })?);
    }
    let text = reader.expect_field("text")?.value()?;
    Ok(FeedbackSummary {
        text,
        source_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{CallCount, Message, ScriptRule, ScriptedProvider};

    #[test]
    fn logical_clock_is_deterministic_and_monotone() {
        let clock = LogicalClock::default();
        let a = clock.now_ms();
        let b = clock.now_ms();
        assert!(b > a);
        let fresh = LogicalClock::default();
        assert_eq!(fresh.now_ms(), a);
    }

    #[test]
    fn exchange_log_appends_and_reparses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exchanges.log");
        let log = ExchangeLog::create(&path, Box::new(LogicalClock::default())).unwrap();
        let scripted = ScriptedProvider::new(vec![ScriptRule::reply("t", CallCount::Any, "ok\nline2")]);
        let traced = TracingProvider {
            inner: &scripted,
            log: &log,
        };
        let request = ChatRequest {
            model_id: "m".to_string(),
            messages: vec![Message::user("q")],
            temperature: 0.0,
            max_output_tokens: 8,
            request_tag: "t".to_string(),
        };
        traced.complete(&request).unwrap();
        traced.complete(&request).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let parsed = parse_exchange_log(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].seq, 1);
        assert_eq!(parsed[1].seq, 2);
        assert_eq!(parsed[0].tag, "t");
        assert_eq!(parsed[0].response.text, "ok\nline2");
        assert_eq!(parsed, log.records());
    }

    #[test]
    fn exchange_log_reopen_continues_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exchanges.log");
        {
            let log = ExchangeLog::create(&path, Box::new(LogicalClock::default())).unwrap();
            let request = ChatRequest {
                model_id: "m".to_string(),
                messages: vec![Message::user("q")],
                temperature: 0.0,
                max_output_tokens: 8,
                request_tag: "t".to_string(),
            };
            log.append(
                &request,
                &ChatResponse {
                    text: "r".to_string(),
                    finish_reason: crate::provider::FinishReason::Stop,
                    usage: Default::default(),
                    latency_ms: 0,
                },
            )
            .unwrap();
        }
        let log = ExchangeLog::reopen(&path, Box::new(LogicalClock::default())).unwrap();
        assert_eq!(log.records().len(), 1);
        let request = ChatRequest {
            model_id: "m".to_string(),
            messages: vec![Message::user("q2")],
            temperature: 0.0,
            max_output_tokens: 8,
            request_tag: "t".to_string(),
        };
        let record = log
            .append(
                &request,
                &ChatResponse {
                    text: "r2".to_string(),
                    finish_reason: crate::provider::FinishReason::Stop,
                    usage: Default::default(),
                    latency_ms: 0,
                },
            )
            .unwrap();
        assert_eq!(record.seq, 2);
    }

    #[test]
    fn report_document_round_trip() {
        let verdicts = vec![
            StepVerdict::correct(1),
            StepVerdict::wrong(2, true, false, "sign error\non line two").unwrap(),
        ];
        let report = ReviewReport::assemble(ReviewMode::Atomic, verdicts, 2).unwrap();
        let doc = report_to_document(&report);
        assert_eq!(report_from_document(&doc).unwrap(), report);
    }

    #[test]
    fn report_parse_rejects_inconsistent_overall() {
        let verdicts = vec![StepVerdict::correct(1)];
        let report = ReviewReport::assemble(ReviewMode::Atomic, verdicts, 1).unwrap();
        let doc = report_to_document(&report).replace("overall: true", "overall: false");
        assert!(report_from_document(&doc).is_err());
    }

    #[test]
    fn report_parse_rejects_feedback_on_correct_verdict() {
        let doc = "format: loca-report/1\nmode: atomic\noverall: true\nverdicts: 1\n\nverdict: 1\nvalidity: correct\nprinciple_ok: true\nderivation_ok: false\n";
        assert!(report_from_document(doc).is_err());
    }

    #[test]
    fn summary_document_round_trip() {
        let summary = FeedbackSummary {
            text: "Step 2: fix the sign\nStep 5: recheck limits".to_string(),
            source_indices: vec![2, 5],
        };
        let doc = summary_to_document(&summary);
        assert_eq!(summary_from_document(&doc).unwrap(), summary);
    }
}
