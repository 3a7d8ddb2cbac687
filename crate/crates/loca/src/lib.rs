//! Iterative augment-and-review engine for hard scientific problems.
//!
//! A solution is represented as a logical chain: an ordered sequence of
//! atomic steps, each pairing the principle it invokes with the derivation
//! that applies it. The engine interprets the raw problem into a structured
//! form, generates a chain, reviews every step sequentially with separate
//! principle and derivation checks, aggregates the verdicts, and refines
//! against the summarized feedback until the review passes or the iteration
//! budget runs out.
//!
//! Modules:
//! - [`chain`]: the data model and its aggregation laws
//! - [`provider`]: chat-completion backends (HTTP, cassette replay, mock)
//! - [`interpreter`]: raw problem to five-section structured form
//! - [`augmenter`]: chain generation, refinement and output parsing
//! - [`reviewer`]: atomic/holistic review and feedback summarization
//! - [`orchestrator`]: the solve loop, batch runs and resume
//! - [`scoring`]: rubric grading and the error-rate metric
//! - [`config`]: engine and provider configuration

pub mod augmenter;
pub mod chain;
pub mod config;
pub mod interpreter;
pub mod orchestrator;
pub mod prompts;
pub mod provider;
pub mod reviewer;
pub mod scoring;
pub mod session;
pub mod textfmt;

pub use chain::{
    aggregate_verdicts, chain_from_canonical, chain_to_canonical, context_prefix, validate_chain,
    FeedbackSummary, LogicalChain, RawProblem, ReviewMode, ReviewReport, Step, StepVerdict,
    StructuredProblem, Validity,
};
pub use config::{AugmentMode, ConfigFile, EngineConfig, ProviderConfig, ReviewPromptStyle};
pub use orchestrator::{resume, run_manifest, solve, EngineError, SessionOutcome};
pub use provider::{ChatRequest, ChatResponse, Provider, ProviderError};
