//! Chat-completion provider abstraction.
//!
//! Every stage of the engine talks to a [`Provider`]: the live HTTP client,
//! the cassette recorder/replayer, or the scripted mock. Providers are
//! synchronous, thread-safe and must tolerate concurrent calls from
//! independent sessions.

mod cassette;
mod http;
mod mock;
mod retry;

pub use cassette::{Cassette, CassetteEntry, RecordingProvider, ReplayProvider, CASSETTE_FORMAT};
pub use http::{DialectConfig, HttpProvider};
pub use mock::{CallCount, ScriptAction, ScriptRule, ScriptedProvider, SCRIPT_FORMAT};
pub use retry::{RateLimiter, RetryPolicy};

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Who authored a chat message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// An inline image carried by a message, base64-encoded on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePart {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

/// One chat message: role, text content and optional image attachments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub content: String,
    pub images: Vec<ImagePart>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            images: Vec::new(),
        }
    }
}

/// A completion request. `request_tag` labels the pipeline stage that issued
/// it and is threaded through every error and trace entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub request_tag: String,
}

impl ChatRequest {
    /// Validates the structural invariants: at least one message, opening
    /// with a system or user turn, non-negative temperature.
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest {
                tag: self.request_tag.clone(),
                message: "request has no messages".to_string(),
            });
        }
        if self.messages[0].role == Role::Assistant {
            return Err(ProviderError::InvalidRequest {
                tag: self.request_tag.clone(),
                message: "first message must be system or user".to_string(),
            });
        }
        if self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest {
                tag: self.request_tag.clone(),
                message: format!("negative temperature {}", self.temperature),
            });
        }
        Ok(())
    }

    /// Stable fingerprint over (model_id, messages, temperature,
    /// request_tag). Length-prefixed canonical encoding, so it is sensitive
    /// to content, role order, model, temperature and tag, and independent
    /// of anything else (notably `max_output_tokens`).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_be_bytes());
            hasher.update(bytes);
        };
        feed(b"loca-fingerprint/1");
        feed(self.model_id.as_bytes());
        feed(format!("{}", self.temperature).as_bytes());
        feed(self.request_tag.as_bytes());
        for message in &self.messages {
            feed(message.role.as_str().as_bytes());
            feed(message.content.as_bytes());
            for image in &message.images {
                feed(image.media_type.as_bytes());
                feed(&image.bytes);
            }
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Why a completion stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FinishReason::Stop => "stop",
            FinishReason::Length => "length",
            FinishReason::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "stop" => FinishReason::Stop,
            "length" => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

/// Token accounting reported by the endpoint (zeros when unknown).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A completion result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub latency_ms: u64,
}

/// Provider failures. Each variant carries the request tag of the call that
/// failed so traces can attribute it to a pipeline stage.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("[{tag}] request timed out")]
    Timeout { tag: String },
    #[error("[{tag}] rate limited after {attempts} attempts")]
    RateLimited { tag: String, attempts: u32 },
    #[error("[{tag}] authentication failure: {message}")]
    AuthFailure { tag: String, message: String },
    #[error("[{tag}] malformed response: {message}")]
    MalformedResponse { tag: String, message: String },
    #[error("[{tag}] transport failure after {attempts} attempts: {message}")]
    Transport {
        tag: String,
        attempts: u32,
        message: String,
    },
    #[error("[{tag}] invalid request: {message}")]
    InvalidRequest { tag: String, message: String },
    #[error("[{tag}] no recorded response for fingerprint {fingerprint}")]
    CassetteMiss { tag: String, fingerprint: String },
    #[error("[{tag}] cassette fingerprint collision: {fingerprint}")]
    CassetteCollision { tag: String, fingerprint: String },
    #[error("[{tag}] no script rule matches this request")]
    UnscriptedRequest { tag: String },
    #[error("[{tag}] cassette storage failure: {message}")]
    Storage { tag: String, message: String },
}

impl ProviderError {
    /// The request tag of the failed call.
    pub fn tag(&self) -> &str {
        match self {
            ProviderError::Timeout { tag }
            | ProviderError::RateLimited { tag, .. }
            | ProviderError::AuthFailure { tag, .. }
            | ProviderError::MalformedResponse { tag, .. }
            | ProviderError::Transport { tag, .. }
            | ProviderError::InvalidRequest { tag, .. }
            | ProviderError::CassetteMiss { tag, .. }
            | ProviderError::CassetteCollision { tag, .. }
            | ProviderError::UnscriptedRequest { tag }
            | ProviderError::Storage { tag, .. } => tag,
        }
    }
}

/// A chat-completion backend. Implementations must be safe to call from
/// several sessions at once.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ChatRequest {
        ChatRequest {
            model_id: "model-a".to_string(),
            messages: vec![Message::system("be brief"), Message::user("hello")],
            temperature: 0.3,
            max_output_tokens: 256,
            request_tag: "augment".to_string(),
        }
    }

    #[test]
    fn fingerprint_is_stable() {
        assert_eq!(request().fingerprint(), request().fingerprint());
        assert_eq!(request().fingerprint().len(), 64);
    }

    #[test]
    fn fingerprint_sensitive_to_each_component() {
        let base = request().fingerprint();

        let mut r = request();
        r.model_id = "model-b".to_string();
        assert_ne!(r.fingerprint(), base);

        let mut r = request();
        r.temperature = 0.0;
        assert_ne!(r.fingerprint(), base);

        let mut r = request();
        r.request_tag = "review:P:1".to_string();
        assert_ne!(r.fingerprint(), base);

        let mut r = request();
        r.messages[1].content = "hello!".to_string();
        assert_ne!(r.fingerprint(), base);

        let mut r = request();
        r.messages.swap(0, 1);
        assert_ne!(r.fingerprint(), base, "role order must matter");
    }

    #[test]
    fn fingerprint_ignores_max_output_tokens() {
        let mut r = request();
        r.max_output_tokens = 9999;
        assert_eq!(r.fingerprint(), request().fingerprint());
    }

    #[test]
    fn fingerprint_resists_concatenation_ambiguity() {
        let mut a = request();
        a.messages = vec![Message::user("ab")];
        let mut b = request();
        b.messages = vec![Message::user("a"), Message::user("b")];
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn validate_rejects_bad_requests() {
        let mut r = request();
        r.messages.clear();
        assert!(r.validate().is_err());

        let mut r = request();
        r.messages[0] = Message::assistant("i speak first");
        assert!(r.validate().is_err());

        let mut r = request();
        r.temperature = -1.0;
        assert!(r.validate().is_err());

        assert!(request().validate().is_ok());
    }
}
