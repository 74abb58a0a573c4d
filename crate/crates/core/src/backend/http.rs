//! OpenAI-compatible streaming chat-completions client.
//!
//! Sends one POST per stream with `stream: true`, `logprobs: true`, and
//! `top_logprobs: k`, and parses the server-sent-event chunks into
//! [`TokenStep`]s. Backends that do not return per-token top-k logprobs are
//! rejected at the first content chunk — the uncertainty statistic cannot be
//! computed without them. Note that some serving stacks report logprobs
//! after their sampling filters; the client records whatever the backend
//! reports.
//!
//! Cancellation drops the response body between chunks, which closes the
//! connection and stops server-side generation for compliant servers.

use std::io::{BufRead, BufReader, Read};
use std::time::Duration;

use serde::Deserialize;

use crate::stability::TokenStep;
use crate::Scalar;

use super::{Backend, BackendError, GenerationRequest, TokenStream};

/// Connection settings. The API key is read from the named environment
/// variable at request time; the value itself is never logged.
#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Base URL up to and including the API root, e.g. `http://host:8000/v1`.
    pub base_url: String,
    /// Environment variable holding the bearer token, if the server needs one.
    pub api_key_env: Option<String>,
    pub request_timeout: Duration,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: Some("PACER_API_KEY".into()),
            request_timeout: Duration::from_secs(600),
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Connection(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn api_key(&self) -> Option<String> {
        self.config.api_key_env.as_ref().and_then(|name| std::env::var(name).ok())
    }
}

impl Backend for HttpBackend {
    fn generate_stream(
        &self,
        request: &GenerationRequest,
    ) -> Result<Box<dyn TokenStream + '_>, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "logprobs": true,
            "top_logprobs": request.top_logprobs,
            "stream": true,
        });
        let mut http = self.client.post(&url).json(&body);
        if let Some(key) = self.api_key() {
            http = http.bearer_auth(key);
        }
        let response = http.send().map_err(|e| BackendError::Connection(e.to_string()))?;
        if !response.status().is_success() {
            return Err(BackendError::Connection(format!(
                "{} returned HTTP {}",
                url,
                response.status()
            )));
        }
        Ok(Box::new(SseStream {
            reader: Some(BufReader::new(Box::new(response))),
            pending: Vec::new(),
            yielded: 0,
            max_tokens: request.max_tokens,
        }))
    }
}

#[derive(Deserialize)]
struct ChatChunk {
    choices: Vec<ChunkChoice>,
}

#[derive(Deserialize)]
struct ChunkChoice {
    #[serde(default)]
    logprobs: Option<ChunkLogprobs>,
    #[serde(default)]
    delta: Option<ChunkDelta>,
}

#[derive(Deserialize)]
struct ChunkDelta {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChunkLogprobs {
    #[serde(default)]
    content: Vec<ContentLogprob>,
}

#[derive(Deserialize)]
struct ContentLogprob {
    token: String,
    logprob: Scalar,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    logprob: Scalar,
}

struct SseStream {
    reader: Option<BufReader<Box<dyn Read + Send>>>,
    /// Steps parsed from the current chunk but not yet handed out.
    pending: Vec<TokenStep<Scalar>>,
    yielded: u64,
    max_tokens: u64,
}

impl SseStream {
    /// Reads SSE lines until one `data:` payload is consumed; fills `pending`.
    fn read_chunk(&mut self) -> Result<bool, BackendError> {
        let Some(reader) = self.reader.as_mut() else { return Ok(false) };
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                return Ok(false);
            }
            let Some(payload) = line.trim_start().strip_prefix("data:") else { continue };
            let payload = payload.trim();
            if payload.is_empty() {
                continue;
            }
            if payload == "[DONE]" {
                self.reader = None;
                return Ok(false);
            }
            let chunk: ChatChunk = serde_json::from_str(payload)
                .map_err(|e| BackendError::Protocol(format!("bad stream chunk: {e}")))?;
            let Some(choice) = chunk.choices.into_iter().next() else { continue };
            let has_content =
                choice.delta.as_ref().and_then(|d| d.content.as_deref()).is_some_and(|c| !c.is_empty());
            let entries = choice.logprobs.map(|l| l.content).unwrap_or_default();
            if entries.is_empty() {
                if has_content {
                    // A token arrived without its logprobs: this server
                    // cannot drive the uncertainty monitor.
                    return Err(BackendError::MissingLogprobs);
                }
                continue;
            }
            for entry in entries {
                let mut topk: Vec<Scalar> = if entry.top_logprobs.is_empty() {
                    vec![entry.logprob]
                } else {
                    entry.top_logprobs.iter().map(|t| t.logprob).collect()
                };
                // Normalize at the boundary: descending order, and clamp the
                // tiny positive values some stacks emit for near-1 tokens.
                topk.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
                for lp in &mut topk {
                    if *lp > 0.0 {
                        *lp = 0.0;
                    }
                }
                self.pending.push(TokenStep::new(0, entry.token, topk));
            }
            return Ok(true);
        }
    }
}

impl TokenStream for SseStream {
    fn next_step(&mut self) -> Result<Option<TokenStep<Scalar>>, BackendError> {
        loop {
            if self.yielded >= self.max_tokens {
                self.reader = None;
                return Ok(None);
            }
            if let Some(mut step) = (!self.pending.is_empty()).then(|| self.pending.remove(0)) {
                self.yielded += 1;
                step.step_index = self.yielded;
                return Ok(Some(step));
            }
            match self.read_chunk() {
                Ok(true) => continue,
                Ok(false) => return Ok(None),
                Err(e) => {
                    self.reader = None;
                    return Err(e);
                }
            }
        }
    }

    fn cancel(&mut self) {
        // Dropping the reader closes the connection.
        self.reader = None;
    }
}
