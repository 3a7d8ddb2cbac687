//! Live chat-completions HTTP client.
//!
//! Speaks the common chat-completions JSON dialect natively; other dialects
//! attach through [`DialectConfig`] (endpoint path plus field mapping)
//! without code changes.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::retry::{RateLimiter, RetryPolicy};
use super::{ChatRequest, ChatResponse, FinishReason, Provider, ProviderError, Usage};

/// Wire-level mapping for an endpoint family. Defaults cover the common
/// `POST {endpoint}/chat/completions` dialect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialectConfig {
    /// Path appended to the endpoint URL.
    pub path: String,
    /// Request field carrying the sampling temperature.
    pub temperature_field: String,
    /// Request field carrying the output-token cap.
    pub max_tokens_field: String,
    /// Dot path to the completion text in the response JSON.
    pub text_path: String,
    /// Dot path to the finish reason; missing values map to `Other`.
    pub finish_path: String,
    /// Dot paths to the token counts; missing values map to zero.
    pub prompt_tokens_path: String,
    pub completion_tokens_path: String,
    /// Whether the dialect accepts image parts. Image-bearing requests
    /// against a text-only dialect are rejected up front.
    pub supports_images: bool,
}

impl Default for DialectConfig {
    fn default() -> Self {
        Self {
            path: "/chat/completions".to_string(),
            temperature_field: "temperature".to_string(),
            max_tokens_field: "max_tokens".to_string(),
            text_path: "choices.0.message.content".to_string(),
            finish_path: "choices.0.finish_reason".to_string(),
            prompt_tokens_path: "usage.prompt_tokens".to_string(),
            completion_tokens_path: "usage.completion_tokens".to_string(),
            supports_images: true,
        }
    }
}

/// Follows a dot path (`choices.0.message.content`) into a JSON value.
fn json_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    let mut current = value;
    for segment in path.split('.') {
        current = match segment.parse::<usize>() {
            Ok(index) => current.get(index)?,
            Err(_) => current.get(segment)?,
        };
    }
    Some(current)
}

const BASE64_ALPHABET: &[u8; 64] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

fn base64_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = (u32::from(b[0]) << 16) | (u32::from(b[1]) << 8) | u32::from(b[2]);
        out.push(BASE64_ALPHABET[(n >> 18) as usize & 63] as char);
        out.push(BASE64_ALPHABET[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 {
            BASE64_ALPHABET[(n >> 6) as usize & 63] as char
        } else {
            '='
        });
        out.push(if chunk.len() > 2 {
            BASE64_ALPHABET[n as usize & 63] as char
        } else {
            '='
        });
    }
    out
}

enum Transient {
    Timeout,
    RateLimited,
    Server(String),
    Network(String),
}

enum AttemptOutcome {
    Success(Value, u64),
    Fatal(ProviderError),
    Retryable(Transient),
}

/// HTTP-backed provider with retry, rate limiting and dialect mapping.
pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    model_fallback: String,
    api_key: Option<String>,
    dialect: DialectConfig,
    retry: RetryPolicy,
    limiter: Option<Arc<RateLimiter>>,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model_fallback: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            endpoint: endpoint.into(),
            model_fallback: model_fallback.into(),
            api_key: None,
            dialect: DialectConfig::default(),
            retry: RetryPolicy::default(),
            limiter: None,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_dialect(mut self, dialect: DialectConfig) -> Self {
        self.dialect = dialect;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: Option<u32>) -> Self {
        self.limiter = requests_per_minute.map(|rpm| Arc::new(RateLimiter::new(rpm)));
        self
    }

    pub fn with_request_timeout(mut self, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        self.agent = ureq::Agent::new_with_config(config);
        self
    }

    fn build_body(&self, request: &ChatRequest) -> Result<Value, ProviderError> {
        let mut messages = Vec::with_capacity(request.messages.len());
        for message in &request.messages {
            if message.images.is_empty() {
                messages.push(json!({
                    "role": message.role.as_str(),
                    "content": message.content,
                }));
                continue;
            }
            if !self.dialect.supports_images {
                return Err(ProviderError::InvalidRequest {
                    tag: request.request_tag.clone(),
                    message: "request carries images but the configured dialect is text-only"
                        .to_string(),
                });
            }
            let mut parts = vec![json!({"type": "text", "text": message.content})];
            for image in &message.images {
                let url = format!(
                    "data:{};base64,{}",
                    image.media_type,
                    base64_encode(&image.bytes)
                );
                parts.push(json!({"type": "image_url", "image_url": {"url": url}}));
            }
            messages.push(json!({
                "role": message.role.as_str(),
                "content": parts,
            }));
        }
        let model = if request.model_id.is_empty() {
            &self.model_fallback
        } else {
            &request.model_id
        };
        let mut body = json!({
            "model": model,
            "messages": messages,
        });
        body[self.dialect.temperature_field.as_str()] = json!(request.temperature);
        body[self.dialect.max_tokens_field.as_str()] = json!(request.max_output_tokens);
        Ok(body)
    }

    fn attempt(&self, body: &Value, tag: &str) -> AttemptOutcome {
        let url = format!("{}{}", self.endpoint, self.dialect.path);
        let mut builder = self
            .agent
            .post(&url)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let started = Instant::now();
        let result = builder.send(body.to_string());
        let elapsed = started.elapsed().as_millis() as u64;
        match result {
            Ok(response) => {
                let status = response.status().as_u16();
                let text = match response.into_body().read_to_string() {
                    Ok(t) => t,
                    Err(e) => return AttemptOutcome::Retryable(Transient::Network(e.to_string())),
                };
                match status {
                    200..=299 => match serde_json::from_str::<Value>(&text) {
                        Ok(value) => AttemptOutcome::Success(value, elapsed),
                        Err(e) => AttemptOutcome::Fatal(ProviderError::MalformedResponse {
                            tag: tag.to_string(),
                            message: format!("response is not JSON: {e}"),
                        }),
                    },
                    401 | 403 => AttemptOutcome::Fatal(ProviderError::AuthFailure {
                        tag: tag.to_string(),
                        message: format!("endpoint returned {status}"),
                    }),
                    429 => AttemptOutcome::Retryable(Transient::RateLimited),
                    500..=599 => {
                        AttemptOutcome::Retryable(Transient::Server(format!("status {status}")))
                    }
                    other => AttemptOutcome::Fatal(ProviderError::InvalidRequest {
                        tag: tag.to_string(),
                        message: format!("endpoint rejected the request with status {other}"),
                    }),
                }
            }
            Err(ureq::Error::Timeout(_)) => AttemptOutcome::Retryable(Transient::Timeout),
            Err(e) => AttemptOutcome::Retryable(Transient::Network(e.to_string())),
        }
    }

    fn parse_response(
        &self,
        value: &Value,
        latency_ms: u64,
        tag: &str,
    ) -> Result<ChatResponse, ProviderError> {
        let text = json_path(value, &self.dialect.text_path)
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::MalformedResponse {
                tag: tag.to_string(),
                message: format!("no text at `{}`", self.dialect.text_path),
            })?
            .to_string();
        let finish_reason = json_path(value, &self.dialect.finish_path)
            .and_then(Value::as_str)
            .map(FinishReason::parse)
            .unwrap_or(FinishReason::Other);
        if text.is_empty() && finish_reason == FinishReason::Stop {
            return Err(ProviderError::MalformedResponse {
                tag: tag.to_string(),
                message: "completion stopped normally but carries no text".to_string(),
            });
        }
        let read_count = |path: &str| {
            json_path(value, path)
                .and_then(Value::as_u64)
                .unwrap_or(0)
        };
        Ok(ChatResponse {
            text,
            finish_reason,
            usage: Usage {
                prompt_tokens: read_count(&self.dialect.prompt_tokens_path),
                completion_tokens: read_count(&self.dialect.completion_tokens_path),
            },
            latency_ms,
        })
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let tag = request.request_tag.clone();
        let body = self.build_body(request)?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let transient = match self.attempt(&body, &tag) {
                AttemptOutcome::Success(value, latency) => {
                    return self.parse_response(&value, latency, &tag);
                }
                AttemptOutcome::Fatal(err) => return Err(err),
                AttemptOutcome::Retryable(t) => t,
            };
            match self.retry.backoff_after(attempt) {
                Some(delay) => std::thread::sleep(delay),
                None => {
                    return Err(match transient {
                        Transient::Timeout => ProviderError::Timeout { tag },
                        Transient::RateLimited => ProviderError::RateLimited {
                            tag,
                            attempts: attempt,
                        },
                        Transient::Server(message) | Transient::Network(message) => {
                            ProviderError::Transport {
                                tag,
                                attempts: attempt,
                                message,
                            }
                        }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_path_follows_keys_and_indices() {
        let value = json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(
            json_path(&value, "choices.0.message.content").and_then(Value::as_str),
            Some("hi")
        );
        assert!(json_path(&value, "choices.1.message").is_none());
        assert!(json_path(&value, "missing").is_none());
    }

    #[test]
    fn base64_matches_known_vectors() {
        assert_eq!(base64_encode(b""), "");
        assert_eq!(base64_encode(b"f"), "Zg==");
        assert_eq!(base64_encode(b"fo"), "Zm8=");
        assert_eq!(base64_encode(b"foo"), "Zm9v");
        assert_eq!(base64_encode(b"foobar"), "Zm9vYmFy");
    }

    #[test]
    fn image_request_against_text_only_dialect_is_rejected() {
        let provider = HttpProvider::new("http://127.0.0.1:1", "m").with_dialect(DialectConfig {
            supports_images: false,
            ..DialectConfig::default()
        });
        let request = ChatRequest {
            model_id: "m".to_string(),
            messages: vec![crate::provider::Message {
                role: crate::provider::Role::User,
                content: "see figure".to_string(),
                images: vec![crate::provider::ImagePart {
                    media_type: "image/png".to_string(),
                    bytes: vec![0, 1],
                }],
            }],
            temperature: 0.0,
            max_output_tokens: 16,
            request_tag: "interpret".to_string(),
        };
        let err = provider.build_body(&request).unwrap_err();
        assert!(matches!(err, ProviderError::InvalidRequest { .. }));
    }

    #[test]
    fn body_uses_dialect_field_names() {
        let provider = HttpProvider::new("http://x", "fallback").with_dialect(DialectConfig {
            max_tokens_field: "max_completion_tokens".to_string(),
            ..DialectConfig::default()
        });
        let request = ChatRequest {
            model_id: String::new(),
            messages: vec![crate::provider::Message::user("q")],
            temperature: 0.5,
            max_output_tokens: 99,
            request_tag: "t".to_string(),
        };
        let body = provider.build_body(&request).unwrap();
        assert_eq!(body["model"], "fallback");
        assert_eq!(body["max_completion_tokens"], 99);
        assert!(body.get("max_tokens").is_none());
    }
}
