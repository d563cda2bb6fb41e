//! LLM-facing side of the pipeline: prompt rendering, backend calls with a
//! single format retry, and labeled-number parsing.
//!
//! Backends are pluggable through [`CompletionBackend`]. Besides the HTTP
//! client there are deterministic stubs (persistence, panel oracle,
//! scripted transcript) and a transcript cache that makes repeated runs
//! replayable.

mod backend;
mod parse;
mod prompt;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    prompt_sha256, stub_backend, BackendConfig, BackendError, CachedBackend, CompletionBackend, CompletionRequest,
    HttpBackend, StubBackend, StubKind, TranscriptCache, TranscriptRecord,
};
pub use parse::{parse_context, parse_y, ParsedContext, ParsedY};
pub use prompt::{
    build_prompt, format_number, PromptMode, PromptSpec, RecentEntry, CONTEXT_LABELS, LABEL_ST, LABEL_XB, LABEL_XV,
    LABEL_Y, STRICT_FORMAT_SUFFIX,
};

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("recent block must have {expected} entries, got {got}")]
    RecentBlockLength { expected: usize, got: usize },
    #[error("recent block is not in chronological order")]
    UnorderedBlock,
}

/// Retry behaviour around a backend call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Pause before re-sending after a transport failure.
    pub transport_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            transport_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff() -> Self {
        RetryPolicy {
            transport_backoff: Duration::ZERO,
        }
    }
}

/// Result of [`query_with_retry`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    /// Text of the last successful response, if any.
    pub raw: Option<String>,
    pub retried: bool,
    /// Backend calls issued: always 1 or 2.
    pub calls: u8,
    /// Last backend error, if a call failed.
    pub error: Option<String>,
}

/// Send `prompt`; if the response fails `validate` (or the call fails),
/// send exactly one more request. A format failure retries with
/// [`STRICT_FORMAT_SUFFIX`] appended; a transport failure re-sends the same
/// prompt after the policy's backoff.
pub fn query_with_retry(
    backend: &dyn CompletionBackend,
    spec: &PromptSpec,
    prompt: &str,
    run: u32,
    validate: impl Fn(&str) -> bool,
    policy: RetryPolicy,
) -> QueryOutcome {
    let first = backend.complete(&CompletionRequest {
        prompt,
        spec,
        run,
        attempt: 0,
    });
    let (retry_prompt, first_raw, first_err) = match first {
        Ok(text) if validate(&text) => {
            return QueryOutcome {
                raw: Some(text),
                retried: false,
                calls: 1,
                error: None,
            }
        }
        Ok(text) => (format!("{prompt}{STRICT_FORMAT_SUFFIX}"), Some(text), None),
        Err(e) => {
            if e.is_transport() && !policy.transport_backoff.is_zero() {
                std::thread::sleep(policy.transport_backoff);
            }
            (prompt.to_string(), None, Some(e.to_string()))
        }
    };
    match backend.complete(&CompletionRequest {
        prompt: &retry_prompt,
        spec,
        run,
        attempt: 1,
    }) {
        Ok(text) => QueryOutcome {
            raw: Some(text),
            retried: true,
            calls: 2,
            error: first_err,
        },
        Err(e) => QueryOutcome {
            raw: first_raw,
            retried: true,
            calls: 2,
            error: Some(e.to_string()),
        },
    }
}

/// Prompt-only forecast of `y`. A value that is still unparseable after
/// the retry comes back as `None`.
pub fn forecast_y(
    backend: &dyn CompletionBackend,
    spec: &PromptSpec,
    window_len: usize,
    run: u32,
    policy: RetryPolicy,
) -> Result<ParsedY, ContextError> {
    let prompt = build_prompt(spec, window_len)?;
    let outcome = query_with_retry(backend, spec, &prompt, run, |t| parse_y(t).value.is_some(), policy);
    let raw = outcome.raw.unwrap_or_default();
    let mut parsed = parse_y(&raw);
    parsed.retried = outcome.retried;
    Ok(parsed)
}

/// Next-week forecast of the three contextual indicators. A response is
/// valid only when all three labels parse.
pub fn forecast_context(
    backend: &dyn CompletionBackend,
    spec: &PromptSpec,
    window_len: usize,
    run: u32,
    policy: RetryPolicy,
) -> Result<ParsedContext, ContextError> {
    let prompt = build_prompt(spec, window_len)?;
    let outcome = query_with_retry(backend, spec, &prompt, run, |t| parse_context(t).complete, policy);
    let raw = outcome.raw.unwrap_or_default();
    let mut parsed = parse_context(&raw);
    parsed.retried = outcome.retried;
    Ok(parsed)
}
