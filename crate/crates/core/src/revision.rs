//! The single bounded review round and the final aggregation.
//!
//! Each pool trace with an extractable answer gets one review prompt — its
//! own solution tail, its answer, and the rendered consensus packet — and a
//! completion capped at `l_rev` tokens. Unparseable or failed reviews keep
//! the original answer; a failed review must never destroy a valid vote.
//! The final confidence-weighted vote runs over the revised answers using
//! each ORIGINAL trace's weight.

use serde::{Deserialize, Serialize};

use crate::backend::record::RecordSink;
use crate::backend::{Backend, FinishReason, GenerationRequest, TraceRecord};
use crate::config::EngineConfig;
use crate::consensus::{render_packet, trace_weight, truncate_tail, ConsensusPacket, TokenCounter};
use crate::extract::{extract_answer, CanonicalAnswer};
use crate::screening::{StablePool, Trace};
use crate::voting::{self, VoteError, VoteMethod, VoteResult};
use crate::Scalar;

/// The fixed closing instruction of every review prompt.
pub const REVIEW_INSTRUCTION: &str = "If the peer evidence reveals a flaw in your reasoning, \
revise; otherwise keep your answer. End your reply with \\boxed{final answer}.";

/// One trace's review result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionOutcome {
    pub trace_id: u64,
    pub original_answer: CanonicalAnswer,
    pub revised_answer: CanonicalAnswer,
    /// True iff the canonical forms differ.
    pub flipped: bool,
    pub review_tokens: u64,
}

/// Deterministic review prompt: problem, the trace's own solution truncated
/// tail-keeping to `trace_tail_budget` tokens, its current answer, the
/// rendered packet, and the fixed instruction — in that order.
pub fn build_review_prompt(
    problem: &str,
    trace: &Trace,
    answer: &CanonicalAnswer,
    packet: &ConsensusPacket,
    trace_tail_budget: usize,
    counter: &dyn TokenCounter,
) -> String {
    let own_solution = truncate_tail(&trace.text, trace_tail_budget, counter);
    format!(
        "Problem:\n{problem}\n\nYour solution:\n{own_solution}\n\nYour current answer: {answer}\n\n\
Peer consensus:\n{packet}\n\n{instruction}",
        answer = answer.canonical,
        packet = render_packet(packet),
        instruction = REVIEW_INSTRUCTION,
    )
}

/// Runs one review completion and extracts the revised answer.
///
/// Generation is capped at `l_rev` tokens at the request level. On backend
/// failure or extraction failure the original answer is kept; tokens
/// generated before a failure still count.
pub fn review(
    backend: &dyn Backend,
    request: &GenerationRequest,
    original: &CanonicalAnswer,
    recorder: Option<&RecordSink>,
) -> (CanonicalAnswer, u64) {
    let mut steps = Vec::new();
    let mut finish = FinishReason::Stop;
    match backend.generate_stream(request) {
        Ok(mut stream) => loop {
            match stream.next_step() {
                Ok(Some(mut step)) => {
                    step.step_index = steps.len() as u64 + 1;
                    steps.push(step);
                }
                Ok(None) => {
                    if steps.len() as u64 >= request.max_tokens {
                        finish = FinishReason::Length;
                    }
                    break;
                }
                Err(e) => {
                    log::warn!("review {} failed mid-stream: {e}", request.tag);
                    finish = FinishReason::Error;
                    break;
                }
            }
        },
        Err(e) => {
            log::warn!("review {} failed to start: {e}", request.tag);
            finish = FinishReason::Error;
        }
    }
    let tokens = steps.len() as u64;
    if let Some(sink) = recorder {
        let record = TraceRecord::new(request.tag.clone(), request.clone(), steps.clone(), finish);
        if let Err(e) = sink.append(&record) {
            log::warn!("failed to record review {}: {e}", request.tag);
        }
    }
    if finish == FinishReason::Error {
        // Keep-on-failure: a truncated reply must not masquerade as a vote.
        return (original.clone(), tokens);
    }
    let text: String = steps.iter().map(|s| s.token_text.as_str()).collect();
    let revised = extract_answer(&text).unwrap_or_else(|| original.clone());
    (revised, tokens)
}

/// Confidence-weighted vote over canonical answers.
pub fn cwv(
    answers: &[CanonicalAnswer],
    weights: &[Scalar],
    method: VoteMethod,
) -> Result<VoteResult<String, Scalar>, VoteError> {
    let keys: Vec<String> = answers.iter().map(|a| a.canonical.clone()).collect();
    voting::cwv(&keys, weights, method)
}

/// Unweighted majority vote over canonical answers.
pub fn mv(answers: &[CanonicalAnswer]) -> Result<VoteResult<String, Scalar>, VoteError> {
    let keys: Vec<String> = answers.iter().map(|a| a.canonical.clone()).collect();
    voting::mv(&keys)
}

/// The revision phase: one review per answer-bearing pool trace, then the
/// final vote over revised answers with original-trace weights. Answerless
/// traces are skipped — there is nothing to revise and their weight has no
/// bucket to land in.
pub fn run_phase2(
    pool: &StablePool,
    packet: &ConsensusPacket,
    backend: &dyn Backend,
    problem: &str,
    config: &EngineConfig,
    counter: &dyn TokenCounter,
    recorder: Option<&RecordSink>,
) -> Result<(VoteResult<String, Scalar>, Vec<RevisionOutcome>), VoteError> {
    let reviewable: Vec<&Trace> =
        pool.entries.iter().filter(|t| t.answer.is_some()).collect();
    if reviewable.is_empty() {
        return Err(VoteError::Empty);
    }

    let outcomes: Vec<RevisionOutcome> = crate::screening::run_attempts(
        config.parallel,
        reviewable.iter().map(|t| t.id).collect(),
        |id| {
            let trace = pool.trace(id).expect("reviewable id comes from the pool");
            let original = trace.answer.as_ref().expect("reviewable traces have answers");
            let prompt = build_review_prompt(
                problem,
                trace,
                original,
                packet,
                config.trace_tail_budget,
                counter,
            );
            let request = GenerationRequest {
                prompt,
                max_tokens: config.l_rev as u64,
                temperature: config.sampling_temperature,
                top_p: config.top_p,
                top_logprobs: config.k,
                stream: true,
                model_name: config.model.clone(),
                tag: format!("review/{id}"),
            };
            let (revised, review_tokens) = review(backend, &request, original, recorder);
            RevisionOutcome {
                trace_id: id,
                flipped: revised.canonical != original.canonical,
                original_answer: original.clone(),
                revised_answer: revised,
                review_tokens,
            }
        },
    );

    let answers: Vec<CanonicalAnswer> =
        outcomes.iter().map(|o| o.revised_answer.clone()).collect();
    let weights: Vec<Scalar> = outcomes
        .iter()
        .map(|o| {
            let trace = pool.trace(o.trace_id).expect("outcome id comes from the pool");
            trace_weight(trace.stability, config.weight_mode())
        })
        .collect();
    let vote = cwv(&answers, &weights, VoteMethod::CwvRevised)?;
    Ok((vote, outcomes))
}
