//! Record/replay cassettes: every provider exchange is persisted as a
//! `loca-cassette/1` document so later runs can replay responses without
//! network access.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::textfmt::{self, DocError, DocReader};

use super::{ChatRequest, ChatResponse, FinishReason, Provider, ProviderError, Usage};

/// Version header of the cassette file format.
pub const CASSETTE_FORMAT: &str = "loca-cassette/1";

/// One recorded exchange: the request's fingerprint plus stage tag and
/// model for human inspection, and the response stored verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub tag: String,
    pub model_id: String,
    pub response: ChatResponse,
}

/// An ordered list of recorded exchanges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn parse(text: &str) -> Result<Self, DocError> {
        let mut reader = DocReader::new(text);
        textfmt::expect_format(&mut reader, CASSETTE_FORMAT)?;
        let mut entries = Vec::new();
        while let Some(field) = reader.next_field()? {
            if field.key != "entry" {
                return Err(DocError::at(
                    field.line,
                    format!("expected `entry` field, found `{}`", field.key),
                ));
            }
            let ordinal = field.as_usize()?;
            if ordinal != entries.len() + 1 {
                return Err(DocError::at(
                    field.line,
                    format!("entry {ordinal} out of order, expected {}", entries.len() + 1),
                ));
            }
            let fingerprint = reader.expect_field("fingerprint")?.value()?;
            let tag = reader.expect_field("tag")?.value()?;
            let model_id = reader.expect_field("model")?.value()?;
            let finish = reader.expect_field("finish")?.value()?;
            let prompt_tokens = reader.expect_field("prompt_tokens")?.as_usize()? as u64;
            let completion_tokens = reader.expect_field("completion_tokens")?.as_usize()? as u64;
            let latency_ms = reader.expect_field("latency_ms")?.as_usize()? as u64;
            let text = reader.expect_field("response")?.value()?;
            entries.push(CassetteEntry {
                fingerprint,
                tag,
                model_id,
                response: ChatResponse {
                    text,
                    finish_reason: FinishReason::parse(&finish),
                    usage: Usage {
                        prompt_tokens,
                        completion_tokens,
                    },
                    latency_ms,
                },
            });
        }
        Ok(Self { entries })
    }

    pub fn to_document(&self) -> String {
        let mut out = String::new();
        textfmt::push_raw(&mut out, "format", CASSETTE_FORMAT);
        for (i, entry) in self.entries.iter().enumerate() {
            out.push('\n');
            out.push_str(&render_entry(i + 1, entry));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, DocError> {
        let text = fs::read_to_string(path)
            .map_err(|e| DocError::new(format!("cannot read cassette {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn render_entry(ordinal: usize, entry: &CassetteEntry) -> String {
    let mut out = String::new();
    textfmt::push_raw(&mut out, "entry", ordinal);
    textfmt::push_field(&mut out, "fingerprint", &entry.fingerprint);
    textfmt::push_field(&mut out, "tag", &entry.tag);
    textfmt::push_field(&mut out, "model", &entry.model_id);
    textfmt::push_raw(&mut out, "finish", entry.response.finish_reason.as_str());
    textfmt::push_raw(&mut out, "prompt_tokens", entry.response.usage.prompt_tokens);
    textfmt::push_raw(&mut out, "completion_tokens", entry.response.usage.completion_tokens);
    textfmt::push_raw(&mut out, "latency_ms", entry.response.latency_ms);
    textfmt::push_field(&mut out, "response", &entry.response.text);
    out
}

/// Replays recorded responses by request fingerprint. Any request without a
/// recorded twin fails with a [`ProviderError::CassetteMiss`] naming the
/// fingerprint, so drifted prompts are caught instead of silently served.
pub struct ReplayProvider {
    by_fingerprint: HashMap<String, ChatResponse>,
}

impl ReplayProvider {
    /// Builds a replayer from a cassette. In strict mode duplicate
    /// fingerprints with differing responses are rejected.
    pub fn new(cassette: Cassette, strict: bool) -> Result<Self, ProviderError> {
        let mut by_fingerprint = HashMap::new();
        for entry in cassette.entries {
            match by_fingerprint.get(&entry.fingerprint) {
                Some(existing) if strict && *existing != entry.response => {
                    return Err(ProviderError::CassetteCollision {
                        tag: entry.tag,
                        fingerprint: entry.fingerprint,
                    });
                }
                _ => {
                    by_fingerprint.insert(entry.fingerprint, entry.response);
                }
            }
        }
        Ok(Self { by_fingerprint })
    }

    pub fn from_path(path: &Path, strict: bool) -> Result<Self, ProviderError> {
        let cassette = Cassette::load(path).map_err(|e| ProviderError::Storage {
            tag: String::new(),
            message: e.to_string(),
        })?;
        Self::new(cassette, strict)
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let fingerprint = request.fingerprint();
        self.by_fingerprint
            .get(&fingerprint)
            .cloned()
            .ok_or(ProviderError::CassetteMiss {
                tag: request.request_tag.clone(),
                fingerprint,
            })
    }
}

/// Wraps another provider and appends every successful exchange to a
/// cassette file. Appends are serialized per cassette; responses pass
/// through unchanged.
pub struct RecordingProvider<P> {
    inner: P,
    path: PathBuf,
    strict: bool,
    state: Mutex<RecorderState>,
}

struct RecorderState {
    count: usize,
    seen: HashMap<String, String>, // fingerprint -> response text
}

impl<P: Provider> RecordingProvider<P> {
    pub fn create(inner: P, path: impl Into<PathBuf>, strict: bool) -> Result<Self, ProviderError> {
        let path = path.into();
        let mut header = String::new();
        textfmt::push_raw(&mut header, "format", CASSETTE_FORMAT);
        fs::write(&path, header).map_err(|e| ProviderError::Storage {
            tag: String::new(),
            message: format!("cannot create cassette {}: {e}", path.display()),
        })?;
        Ok(Self {
            inner,
            path,
            strict,
            state: Mutex::new(RecorderState {
                count: 0,
                seen: HashMap::new(),
            }),
        })
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        let fingerprint = request.fingerprint();
        let mut state = self.state.lock().expect("recorder state poisoned");
        if let Some(existing) = state.seen.get(&fingerprint) {
            if self.strict && *existing != response.text {
                return Err(ProviderError::CassetteCollision {
                    tag: request.request_tag.clone(),
                    fingerprint,
                });
            }
        }
        state.count += 1;
        let entry = CassetteEntry {
            fingerprint: fingerprint.clone(),
            tag: request.request_tag.clone(),
            model_id: request.model_id.clone(),
            response: response.clone(),
        };
        let mut text = String::from("\n");
        text.push_str(&render_entry(state.count, &entry));
        let mut file = fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| ProviderError::Storage {
                tag: request.request_tag.clone(),
                message: format!("cannot open cassette {}: {e}", self.path.display()),
            })?;
        use std::io::Write;
        file.write_all(text.as_bytes())
            .map_err(|e| ProviderError::Storage {
                tag: request.request_tag.clone(),
                message: format!("cannot append to cassette {}: {e}", self.path.display()),
            })?;
        state.seen.insert(fingerprint, response.text.clone());
        Ok(response)
    }
}
