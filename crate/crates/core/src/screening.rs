//! Warmup threshold estimation, online early stopping, and stable-pool
//! construction — the screening phase of a run.
//!
//! Warmup traces decode to completion and fix a stability threshold at the
//! (100−η)th percentile; every later attempt is monitored token-by-token and
//! cancelled the first time its prefix stability drops below the threshold.
//! Because prefix stability never increases, the first crossing is final.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::backend::record::RecordSink;
use crate::backend::{Backend, BackendError, FinishReason, GenerationRequest, TraceRecord};
use crate::config::EngineConfig;
use crate::extract::{extract_answer, CanonicalAnswer};
use crate::scalar::Real;
use crate::stability::{StabilityMonitor, TokenStep};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("insufficient warmup: no completed warmup trace to estimate a threshold from")]
    InsufficientWarmup,
    #[error("insufficient data: every sampling attempt failed")]
    InsufficientData,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Screening knobs: total attempts, warmup count, and the keep percentile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningConfig {
    pub n_try: u32,
    pub n_init: u32,
    pub eta: f64,
}

/// The stability threshold with the warmup sample that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold<F> {
    pub s: F,
    pub warmup_stabilities: Vec<F>,
}

/// Nearest-rank tail percentile: `s` is the m-th largest warmup stability
/// with `m = ceil(eta·n/100)`, so `{S ≥ s}` keeps the top-η% extended
/// across ties at the boundary. `s` is always an observed value.
pub fn estimate_threshold<F: Real>(
    warmup_stabilities: &[F],
    eta: f64,
) -> Result<Threshold<F>, ScreeningError> {
    if warmup_stabilities.is_empty() {
        return Err(ScreeningError::InsufficientWarmup);
    }
    let n = warmup_stabilities.len();
    let keep = ((eta * n as f64) / 100.0).ceil() as usize;
    let keep = keep.clamp(1, n);
    let mut sorted = warmup_stabilities.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("stabilities are ordered"));
    Ok(Threshold { s: sorted[n - keep], warmup_stabilities: warmup_stabilities.to_vec() })
}

/// The early-stop rule: stop strictly below the threshold; the boundary is
/// kept. The first `true` is final — S_t cannot recover.
pub fn should_stop<F: Real>(current_stability: F, threshold: &Threshold<F>) -> bool {
    current_stability < threshold.s
}

/// Where a trace came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOrigin {
    Warmup,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    EarlyStopped,
}

/// One sampling attempt that produced at least one token.
#[derive(Debug, Clone)]
pub struct Trace {
    pub id: u64,
    pub origin: TraceOrigin,
    pub text: String,
    pub answer: Option<CanonicalAnswer>,
    /// Final S(τ) for completed traces; the stability at the stop step for
    /// early-stopped ones.
    pub stability: Scalar,
    pub status: TraceStatus,
    pub generated_tokens: u64,
}

impl Trace {
    pub fn is_completed(&self) -> bool {
        self.status == TraceStatus::Completed
    }
}

/// The screened set of completed traces the coordination phase works on.
#[derive(Debug, Clone)]
pub struct StablePool {
    /// Completed traces with stability ≥ threshold.s, ordered by id.
    pub entries: Vec<Trace>,
    pub threshold: Threshold<Scalar>,
}

impl StablePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trace(&self, id: u64) -> Option<&Trace> {
        self.entries.iter().find(|t| t.id == id)
    }
}

/// Pool = screened warmup ∪ all online survivors. Survivors are not
/// re-filtered: the online rule already enforced the threshold. Traces
/// without an extractable answer stay in the pool; they are excluded from
/// support sums by the consensus stage.
pub fn build_pool(
    warmup: &[Trace],
    survivors: &[Trace],
    threshold: &Threshold<Scalar>,
) -> StablePool {
    let mut entries: Vec<Trace> = warmup
        .iter()
        .filter(|t| t.is_completed() && t.stability >= threshold.s)
        .cloned()
        .collect();
    entries.extend(survivors.iter().filter(|t| t.is_completed()).cloned());
    entries.sort_by_key(|t| t.id);
    StablePool { entries, threshold: threshold.clone() }
}

/// Outcome of driving one stream to resolution.
#[derive(Debug)]
pub enum AttemptOutcome {
    Trace(Trace),
    /// Backend failure mid-attempt; the tokens were still generated and are
    /// still billed.
    Failed { id: u64, origin: TraceOrigin, tokens: u64, error: String },
}

impl AttemptOutcome {
    pub fn tokens(&self) -> u64 {
        match self {
            AttemptOutcome::Trace(t) => t.generated_tokens,
            AttemptOutcome::Failed { tokens, .. } => *tokens,
        }
    }
}

/// Pulls one stream through a fresh monitor, applying the early-stop rule
/// when a threshold is given, and optionally recording the stream.
pub fn drive_attempt(
    backend: &dyn Backend,
    request: &GenerationRequest,
    window: usize,
    k: usize,
    threshold: Option<&Threshold<Scalar>>,
    id: u64,
    origin: TraceOrigin,
    recorder: Option<&RecordSink>,
) -> AttemptOutcome {
    let mut monitor = StabilityMonitor::new(window, k);
    let mut steps: Vec<TokenStep<Scalar>> = Vec::new();
    let mut finish = FinishReason::Stop;
    let mut failure: Option<String> = None;

    match backend.generate_stream(request) {
        Ok(mut stream) => loop {
            match stream.next_step() {
                Ok(Some(mut step)) => {
                    step.step_index = steps.len() as u64 + 1;
                    match monitor.update(&step) {
                        Ok((_, stability)) => {
                            steps.push(step);
                            if threshold.is_some_and(|th| should_stop(stability, th)) {
                                stream.cancel();
                                finish = FinishReason::Cancelled;
                                break;
                            }
                        }
                        Err(e) => {
                            stream.cancel();
                            finish = FinishReason::Error;
                            failure = Some(e.to_string());
                            break;
                        }
                    }
                }
                Ok(None) => {
                    if steps.len() as u64 >= request.max_tokens {
                        finish = FinishReason::Length;
                    }
                    break;
                }
                Err(e) => {
                    finish = FinishReason::Error;
                    failure = Some(e.to_string());
                    break;
                }
            }
        },
        Err(e) => {
            finish = FinishReason::Error;
            failure = Some(e.to_string());
        }
    }

    let tokens = steps.len() as u64;
    if let Some(sink) = recorder {
        let record = TraceRecord::new(request.tag.clone(), request.clone(), steps.clone(), finish);
        if let Err(e) = sink.append(&record) {
            log::warn!("failed to record stream {}: {e}", request.tag);
        }
    }

    if let Some(error) = failure {
        return AttemptOutcome::Failed { id, origin, tokens, error };
    }
    let Ok(trajectory) = monitor.finalize() else {
        return AttemptOutcome::Failed {
            id,
            origin,
            tokens,
            error: "stream yielded no tokens".into(),
        };
    };
    let text: String = steps.iter().map(|s| s.token_text.as_str()).collect();
    let (status, answer) = if finish == FinishReason::Cancelled {
        (TraceStatus::EarlyStopped, None)
    } else {
        (TraceStatus::Completed, extract_answer(&text))
    };
    AttemptOutcome::Trace(Trace {
        id,
        origin,
        text,
        answer,
        stability: trajectory.final_stability,
        status,
        generated_tokens: tokens,
    })
}

/// Everything the screening phase produced, failed attempts included.
#[derive(Debug)]
pub struct PhaseOneOutput {
    pub pool: StablePool,
    /// Completed warmup traces (screened-out ones included, for fallback).
    pub warmup: Vec<Trace>,
    pub threshold: Threshold<Scalar>,
    /// Every attempt that yielded at least one token or failed, by id.
    pub attempts: Vec<AttemptOutcome>,
    pub warmup_tokens: u64,
    pub online_tokens: u64,
}

/// Runs warmup, estimates the threshold, then the monitored online attempts.
///
/// Warmup is a synchronization barrier: the threshold exists before any
/// online attempt starts. Attempts run with bounded parallelism
/// (`config.parallel`); each stream is owned by exactly one worker, and the
/// only cross-attempt shared value is the immutable threshold.
pub fn run_phase1(
    config: &EngineConfig,
    backend: &dyn Backend,
    prompt: &str,
    recorder: Option<&RecordSink>,
) -> Result<PhaseOneOutput, ScreeningError> {
    let request = |tag: String| GenerationRequest {
        prompt: prompt.to_string(),
        max_tokens: config.max_tokens,
        temperature: config.sampling_temperature,
        top_p: config.top_p,
        top_logprobs: config.k,
        stream: true,
        model_name: config.model.clone(),
        tag,
    };

    // Warmup: decode N_init traces to completion (no threshold yet).
    let warmup_outcomes = run_attempts(
        config.parallel,
        (0..config.n_init as u64).collect(),
        |id| {
            drive_attempt(
                backend,
                &request(format!("warmup/{id}")),
                config.window,
                config.k,
                None,
                id,
                TraceOrigin::Warmup,
                recorder,
            )
        },
    );
    let warmup_tokens: u64 = warmup_outcomes.iter().map(AttemptOutcome::tokens).sum();
    let warmup: Vec<Trace> = warmup_outcomes
        .iter()
        .filter_map(|o| match o {
            AttemptOutcome::Trace(t) => Some(t.clone()),
            AttemptOutcome::Failed { .. } => None,
        })
        .collect();

    let stabilities: Vec<Scalar> = warmup.iter().map(|t| t.stability).collect();
    if stabilities.is_empty() {
        return Err(ScreeningError::InsufficientData);
    }
    let threshold = estimate_threshold(&stabilities, config.eta)?;

    // Online: monitored attempts, cancelled at the first S_t < s.
    let online_ids: Vec<u64> = (config.n_init as u64..config.n_try as u64).collect();
    let online_outcomes = run_attempts(config.parallel, online_ids, |id| {
        drive_attempt(
            backend,
            &request(format!("online/{id}")),
            config.window,
            config.k,
            Some(&threshold),
            id,
            TraceOrigin::Online,
            recorder,
        )
    });
    let online_tokens: u64 = online_outcomes.iter().map(AttemptOutcome::tokens).sum();
    let survivors: Vec<Trace> = online_outcomes
        .iter()
        .filter_map(|o| match o {
            AttemptOutcome::Trace(t) if t.is_completed() => Some(t.clone()),
            _ => None,
        })
        .collect();

    let pool = build_pool(&warmup, &survivors, &threshold);
    let mut attempts = warmup_outcomes;
    attempts.extend(online_outcomes);
    Ok(PhaseOneOutput { pool, warmup, threshold, attempts, warmup_tokens, online_tokens })
}

/// Runs `work(id)` for every id with at most `parallel` workers; results come
/// back in id order regardless of scheduling.
pub(crate) fn run_attempts<T: Send>(
    parallel: usize,
    ids: Vec<u64>,
    work: impl Fn(u64) -> T + Sync,
) -> Vec<T> {
    if ids.is_empty() {
        return Vec::new();
    }
    let next = AtomicU64::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..ids.len()).map(|_| None).collect());
    let workers = parallel.min(ids.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::Relaxed) as usize;
                if slot >= ids.len() {
                    break;
                }
                let out = work(ids[slot]);
                results.lock().expect("attempt results poisoned")[slot] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .expect("attempt results poisoned")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
