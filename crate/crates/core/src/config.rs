//! Engine configuration: every pipeline hyperparameter as a named key.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::WeightMode;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Pipeline knobs. Field names double as config-file keys; see the README
/// for the full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Total sampling attempts, warmup included.
    pub n_try: u32,
    /// Warmup traces decoded to completion before the threshold exists.
    pub n_init: u32,
    /// Screening percentile in (0, 100): "keep the top eta percent".
    pub eta: f64,
    /// Candidate answers carried into the consensus packet.
    pub top_n: usize,
    /// Token budget for each representative rationale.
    pub l_sum: usize,
    /// Token budget for each review completion.
    pub l_rev: usize,
    /// Top-k alternatives per decoding step.
    pub k: usize,
    /// Sliding-window size for the uncertainty average.
    pub window: usize,
    /// Vote-weight temperature: weight = exp(stability / temperature).
    pub temperature: f64,
    /// Sum raw stabilities instead of exp-transformed weights.
    pub raw_weights: bool,
    /// Skip the revision round when one answer holds 100% support.
    pub skip_unanimous: bool,
    /// Token budget for the trace's own solution inside the review prompt.
    pub trace_tail_budget: usize,
    /// Generation cap for full traces.
    pub max_tokens: u64,
    /// Concurrent in-flight streams.
    pub parallel: usize,
    /// Master seed for anything randomized.
    pub seed: u64,
    /// Sampling temperature sent to the backend (not the vote temperature).
    pub sampling_temperature: f64,
    pub top_p: f64,
    pub model: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_try: 256,
            n_init: 64,
            eta: 10.0,
            top_n: 4,
            l_sum: 512,
            l_rev: 1024,
            k: 5,
            window: 1024,
            temperature: 1.0,
            raw_weights: false,
            skip_unanimous: false,
            trace_tail_budget: 1024,
            max_tokens: 4096,
            parallel: 8,
            seed: 0,
            sampling_temperature: 1.0,
            top_p: 1.0,
            model: "default".into(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if self.n_init == 0 {
            return fail("n_init must be ≥ 1");
        }
        if self.n_init > self.n_try {
            return fail("n_init must be ≤ n_try");
        }
        if !(self.eta > 0.0 && self.eta < 100.0) {
            return fail("eta must lie strictly between 0 and 100");
        }
        if self.top_n == 0 || self.l_sum == 0 || self.l_rev == 0 {
            return fail("top_n, l_sum, and l_rev must be ≥ 1");
        }
        if self.k == 0 || self.window == 0 {
            return fail("k and window must be ≥ 1");
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be > 0");
        }
        if self.parallel == 0 {
            return fail("parallel must be ≥ 1");
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be ≥ 1");
        }
        Ok(())
    }

    pub fn weight_mode(&self) -> WeightMode {
        if self.raw_weights {
            WeightMode::RawStability
        } else {
            WeightMode::ExpStability { temperature: self.temperature }
        }
    }
}
