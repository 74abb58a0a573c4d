//! Deterministic scripted backend for tests and fixtures.
//!
//! A script assigns each expected request a token/logprob sequence. Requests
//! are matched in arrival order by default; prompt-hash matching is opt-in
//! via [`MockBackend::by_prompt`]. An unmatched request is a hard
//! [`BackendError::ScriptMiss`] — a test failure signal, never a silent
//! default.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use crate::stability::TokenStep;
use crate::Scalar;

use super::{Backend, BackendError, GenerationRequest, TokenStream};

/// One scripted stream: token texts plus their top-k logprobs.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTrace {
    pub steps: Vec<(String, Vec<Scalar>)>,
    /// When set, the stream yields this error after the scripted steps
    /// instead of finishing naturally (simulates mid-attempt backend loss).
    pub fail_after: bool,
}

impl ScriptedTrace {
    pub fn new(steps: Vec<(String, Vec<Scalar>)>) -> Self {
        Self { steps, fail_after: false }
    }

    /// `total_steps` filler tokens at constant per-step uncertainty `u`
    /// (every logprob is `-u`, so the top-k mean is exactly `u`). Filler
    /// tokens carry no digits, so they never trip the numeric fallback.
    pub fn constant(u: Scalar, k: usize, total_steps: usize) -> Self {
        const FILLER: [&str; 4] = ["so ", "the ", "terms ", "combine "];
        let steps =
            (0..total_steps).map(|i| (FILLER[i % FILLER.len()].to_string(), vec![-u; k])).collect();
        Self::new(steps)
    }

    /// Constant-uncertainty trace whose last three tokens spell
    /// `\boxed{answer}`. `total_steps` must be ≥ 3.
    pub fn with_answer(u: Scalar, k: usize, total_steps: usize, answer: &str) -> Self {
        assert!(total_steps >= 3, "need at least 3 steps for the boxed tail");
        let mut script = Self::constant(u, k, total_steps - 3);
        script.steps.push(("\\boxed{".into(), vec![-u; k]));
        script.steps.push((answer.into(), vec![-u; k]));
        script.steps.push(("}".into(), vec![-u; k]));
        script
    }

    /// Overrides the uncertainty of one step (1-based index).
    pub fn spike(mut self, step_index: usize, u: Scalar, k: usize) -> Self {
        self.steps[step_index - 1].1 = vec![-u; k];
        self
    }

    pub fn failing_after(mut self) -> Self {
        self.fail_after = true;
        self
    }
}

enum Matching {
    Ordered(Mutex<VecDeque<ScriptedTrace>>),
    ByPrompt(Mutex<HashMap<String, VecDeque<ScriptedTrace>>>),
}

/// Fully deterministic [`Backend`] over a fixed script.
pub struct MockBackend {
    matching: Matching,
}

impl MockBackend {
    /// Scripts are consumed in request-arrival order.
    pub fn ordered(scripts: Vec<ScriptedTrace>) -> Self {
        Self { matching: Matching::Ordered(Mutex::new(scripts.into())) }
    }

    /// Scripts are keyed by the exact request prompt.
    pub fn by_prompt(scripts: Vec<(String, ScriptedTrace)>) -> Self {
        let mut map: HashMap<String, VecDeque<ScriptedTrace>> = HashMap::new();
        for (prompt, script) in scripts {
            map.entry(prompt).or_default().push_back(script);
        }
        Self { matching: Matching::ByPrompt(Mutex::new(map)) }
    }

    fn next_script(&self, request: &GenerationRequest) -> Result<ScriptedTrace, BackendError> {
        match &self.matching {
            Matching::Ordered(q) => q
                .lock()
                .expect("script queue poisoned")
                .pop_front()
                .ok_or_else(|| BackendError::ScriptMiss(format!("tag={}", request.tag))),
            Matching::ByPrompt(m) => m
                .lock()
                .expect("script map poisoned")
                .get_mut(&request.prompt)
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| BackendError::ScriptMiss(format!("prompt={:?}", request.prompt))),
        }
    }
}

impl Backend for MockBackend {
    fn generate_stream(
        &self,
        request: &GenerationRequest,
    ) -> Result<Box<dyn TokenStream + '_>, BackendError> {
        let script = self.next_script(request)?;
        Ok(Box::new(MockStream {
            steps: script.steps.into(),
            fail_after: script.fail_after,
            yielded: 0,
            max_tokens: request.max_tokens,
            cancelled: false,
        }))
    }
}

struct MockStream {
    steps: VecDeque<(String, Vec<Scalar>)>,
    fail_after: bool,
    yielded: u64,
    max_tokens: u64,
    cancelled: bool,
}

impl TokenStream for MockStream {
    fn next_step(&mut self) -> Result<Option<TokenStep<Scalar>>, BackendError> {
        if self.cancelled || self.yielded >= self.max_tokens {
            return Ok(None);
        }
        match self.steps.pop_front() {
            Some((token, logprobs)) => {
                self.yielded += 1;
                Ok(Some(TokenStep::new(self.yielded, token, logprobs)))
            }
            None if self.fail_after => {
                Err(BackendError::Connection("scripted mid-stream failure".into()))
            }
            None => Ok(None),
        }
    }

    fn cancel(&mut self) {
        self.cancelled = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(max_tokens: u64) -> GenerationRequest {
        GenerationRequest {
            prompt: "p".into(),
            max_tokens,
            temperature: 1.0,
            top_p: 1.0,
            top_logprobs: 2,
            stream: true,
            model_name: "mock".into(),
            tag: String::new(),
        }
    }

    #[test]
    fn yields_exactly_scripted_steps() {
        let backend = MockBackend::ordered(vec![ScriptedTrace::constant(0.5, 2, 5)]);
        let mut stream = backend.generate_stream(&request(100)).unwrap();
        let mut n = 0;
        while let Some(step) = stream.next_step().unwrap() {
            n += 1;
            assert_eq!(step.step_index, n);
            assert_eq!(step.topk_logprobs, vec![-0.5, -0.5]);
        }
        assert_eq!(n, 5);
    }

    #[test]
    fn cancel_stops_stream() {
        let backend = MockBackend::ordered(vec![ScriptedTrace::constant(0.5, 2, 100)]);
        let mut stream = backend.generate_stream(&request(100)).unwrap();
        for _ in 0..3 {
            stream.next_step().unwrap().unwrap();
        }
        stream.cancel();
        stream.cancel(); // idempotent
        assert!(stream.next_step().unwrap().is_none());
    }

    #[test]
    fn max_tokens_caps_stream() {
        let backend = MockBackend::ordered(vec![ScriptedTrace::constant(0.5, 2, 100)]);
        let mut stream = backend.generate_stream(&request(7)).unwrap();
        let mut n = 0;
        while stream.next_step().unwrap().is_some() {
            n += 1;
        }
        assert_eq!(n, 7);
    }

    #[test]
    fn unmatched_request_is_script_miss() {
        let backend = MockBackend::ordered(vec![]);
        let outcome = match backend.generate_stream(&request(1)) {
            Err(BackendError::ScriptMiss(_)) => Ok(()),
            Err(other) => Err(format!("unexpected error {other:?}")),
            Ok(_) => Err("expected a script miss".into()),
        };
        outcome.unwrap();
    }

    #[test]
    fn prompt_matching_routes_by_prompt() {
        let backend = MockBackend::by_prompt(vec![
            ("p".into(), ScriptedTrace::constant(0.25, 2, 2)),
        ]);
        assert!(backend.generate_stream(&request(8)).is_ok());
        assert!(backend.generate_stream(&request(8)).is_err());
    }

    #[test]
    fn boxed_tail_concatenates() {
        let script = ScriptedTrace::with_answer(0.25, 1, 5, "240");
        let text: String = script.steps.iter().map(|(t, _)| t.as_str()).collect();
        assert!(text.ends_with("\\boxed{240}"));
    }
}
