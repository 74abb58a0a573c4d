//! Streaming model-backend abstraction.
//!
//! A [`Backend`] turns a [`GenerationRequest`] into a pull-based
//! [`TokenStream`] of [`TokenStep`]s that can be cancelled mid-stream. Three
//! implementations ship here: an OpenAI-compatible wire client
//! ([`http::HttpBackend`]), a deterministic scripted mock
//! ([`mock::MockBackend`]), and a record/replay store
//! ([`record::ReplayBackend`]) that makes whole pipeline runs reproducible
//! offline.

pub mod http;
pub mod mock;
pub mod record;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stability::TokenStep;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("connection error: {0}")]
    Connection(String),
    #[error("backend does not expose per-token top-k logprobs")]
    MissingLogprobs,
    #[error("scripted mock has no script for this request: {0}")]
    ScriptMiss(String),
    #[error("record store error at line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a stream ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// Natural end of generation.
    Stop,
    /// Hit the `max_tokens` cap.
    Length,
    /// The engine cancelled the stream (early stop).
    Cancelled,
    /// The backend failed mid-stream.
    Error,
}

/// One generation request. `tag` identifies the engine slot issuing the
/// request ("warmup/3", "online/64", "review/7"); it is stored in trace
/// records so replay can pair streams with slots deterministically, and it
/// is never sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u64,
    pub temperature: f64,
    pub top_p: f64,
    /// Top-k alternatives to request per token; must equal the monitor's k.
    pub top_logprobs: usize,
    pub stream: bool,
    pub model_name: String,
    #[serde(default)]
    pub tag: String,
}

/// A fully recorded stream: the request plus every step it yielded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub request: GenerationRequest,
    pub steps: Vec<TokenStep<Scalar>>,
    pub full_text: String,
    pub finish_reason: FinishReason,
}

impl TraceRecord {
    /// Builds a record, deriving `full_text` from the steps.
    pub fn new(
        trace_id: impl Into<String>,
        request: GenerationRequest,
        steps: Vec<TokenStep<Scalar>>,
        finish_reason: FinishReason,
    ) -> Self {
        let full_text: String = steps.iter().map(|s| s.token_text.as_str()).collect();
        Self { trace_id: trace_id.into(), request, steps, full_text, finish_reason }
    }

    /// `full_text` must equal the concatenation of the step token texts.
    pub fn validate(&self) -> Result<(), BackendError> {
        let joined: String = self.steps.iter().map(|s| s.token_text.as_str()).collect();
        if joined != self.full_text {
            return Err(BackendError::Protocol(format!(
                "record {}: full_text does not match step concatenation",
                self.trace_id
            )));
        }
        Ok(())
    }
}

/// Pull-based token stream. Single-owner; `cancel` is idempotent and
/// cancelling a finished stream is a no-op.
pub trait TokenStream: Send {
    /// Next decoding step; `Ok(None)` is the natural end of the stream.
    fn next_step(&mut self) -> Result<Option<TokenStep<Scalar>>, BackendError>;

    /// Stop the stream; subsequent `next_step` calls return `Ok(None)`.
    fn cancel(&mut self);
}

/// A generation backend. Implementations must support many concurrent
/// in-flight streams.
pub trait Backend: Send + Sync {
    fn generate_stream(
        &self,
        request: &GenerationRequest,
    ) -> Result<Box<dyn TokenStream + '_>, BackendError>;
}
