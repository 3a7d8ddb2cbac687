//! Builds the configured provider and loads problem files.

use std::path::Path;
use std::sync::Arc;

use loca::chain::{problem_from_document, Attachment, RawProblem};
use loca::config::{ConfigFile, ProviderMode, API_KEY_ENV};
use loca::provider::{
    HttpProvider, Provider, RecordingProvider, ReplayProvider, ScriptedProvider,
};

pub fn build_provider(config: &ConfigFile) -> Result<Arc<dyn Provider>, String> {
    let provider = &config.provider;
    match provider.mode {
        ProviderMode::Mock => {
            let script_path = provider
                .script
                .as_ref()
                .ok_or("mock provider needs provider.script in the config")?;
            let text = std::fs::read_to_string(script_path)
                .map_err(|e| format!("cannot read script {}: {e}", script_path.display()))?;
            let rules = ScriptedProvider::parse_script(&text)
                .map_err(|e| format!("script {}: {e}", script_path.display()))?;
            Ok(Arc::new(ScriptedProvider::new(rules)))
        }
        ProviderMode::Replay => {
            let cassette_path = provider
                .cassette
                .as_ref()
                .ok_or("replay provider needs provider.cassette in the config or --cassette")?;
            let replay = ReplayProvider::from_path(cassette_path, true)
                .map_err(|e| format!("cassette {}: {e}", cassette_path.display()))?;
            Ok(Arc::new(replay))
        }
        ProviderMode::Live => {
            let endpoint = provider
                .endpoint
                .as_ref()
                .ok_or("live provider needs provider.endpoint in the config")?;
            let api_key = std::env::var(API_KEY_ENV).ok();
            let http = HttpProvider::new(endpoint, "default")
                .with_api_key(api_key)
                .with_dialect(provider.dialect.apply())
                .with_retry(provider.retry_policy())
                .with_rate_limit(provider.requests_per_minute)
                .with_request_timeout(std::time::Duration::from_secs(
                    provider.request_timeout_secs,
                ));
            if provider.record {
                let cassette_path = provider
                    .cassette
                    .as_ref()
                    .ok_or("recording needs provider.cassette in the config or --cassette")?;
                let recorder = RecordingProvider::create(http, cassette_path, true)
                    .map_err(|e| e.to_string())?;
                return Ok(Arc::new(recorder));
            }
            Ok(Arc::new(http))
        }
    }
}

/// Loads a problem file and the attachment bytes it references (paths are
/// relative to the problem file).
pub fn load_problem(path: &Path) -> Result<RawProblem, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read problem file {}: {e}", path.display()))?;
    let (mut problem, attachment_refs) =
        problem_from_document(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    for (name, media_type) in attachment_refs {
        let attachment_path = base.join(&name);
        let bytes = std::fs::read(&attachment_path)
            .map_err(|e| format!("cannot read attachment {}: {e}", attachment_path.display()))?;
        problem.attachments.push(Attachment { media_type, bytes });
    }
    Ok(problem)
}
