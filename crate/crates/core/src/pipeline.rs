//! End-to-end orchestration: screening, packet construction, the revision
//! round, and the final report.

use thiserror::Error;

use crate::backend::record::RecordSink;
use crate::backend::Backend;
use crate::config::{ConfigError, EngineConfig};
use crate::consensus::{self, ConsensusError, WhitespaceTokens};
use crate::extract::CanonicalAnswer;
use crate::ledger::TokenLedger;
use crate::report::{AttemptStatus, RunReport, TraceRow, VoteSummary, REPORT_VERSION};
use crate::revision::{self, RevisionOutcome};
use crate::screening::{self, AttemptOutcome, ScreeningError, StablePool, Trace};
use crate::voting::{VoteMethod, VoteResult};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Screening(#[from] ScreeningError),
}

/// Runs the full pipeline for one problem.
///
/// The report always carries the token ledger, fallback or not. When the
/// pool is empty or yields no candidate answers, the answer of the
/// highest-stability completed warmup trace is returned and the revision
/// round is skipped.
pub fn run(
    config: &EngineConfig,
    backend: &dyn Backend,
    problem_id: &str,
    problem: &str,
    recorder: Option<&RecordSink>,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let counter = WhitespaceTokens;
    let mode = config.weight_mode();

    let phase1 = screening::run_phase1(config, backend, problem, recorder)?;
    let stabilities = attempt_rows(&phase1.attempts, &phase1.pool);

    let mut report = RunReport {
        report_version: REPORT_VERSION,
        problem_id: problem_id.to_string(),
        n_try: config.n_try,
        final_answer: None,
        fallback: false,
        pool_size: phase1.pool.len(),
        margin: None,
        threshold: Some(phase1.threshold.s),
        pacer: None,
        online_baseline: None,
        mv_baseline: None,
        flips: Vec::new(),
        stabilities,
        ledger: TokenLedger::new(phase1.warmup_tokens, phase1.online_tokens, 0, 0),
    };

    let support = match consensus::support(&phase1.pool, mode) {
        Ok(map) => map,
        Err(ConsensusError::EmptyPool | ConsensusError::NoCandidates) => {
            report.fallback = true;
            report.final_answer = best_warmup_answer(&phase1.warmup);
            return Ok(report);
        }
    };
    report.margin = Some(support_margin(&support));

    let (answers, weights) = original_votes(&phase1.pool, mode);
    let online = revision::cwv(&answers, &weights, VoteMethod::CwvOriginal)
        .expect("support non-empty implies answers exist");
    let mv = revision::mv(&answers).expect("answers non-empty");
    report.online_baseline = Some(VoteSummary::from(&online));
    report.mv_baseline = Some(VoteSummary::from(&mv));

    let packet = consensus::build_packet(&phase1.pool, config.top_n, config.l_sum, mode, &counter)
        .expect("support already computed");

    let (pacer, flips): (VoteResult<String, Scalar>, Vec<RevisionOutcome>) =
        if config.skip_unanimous && packet.is_unanimous() {
            (online.clone(), Vec::new())
        } else {
            revision::run_phase2(
                &phase1.pool,
                &packet,
                backend,
                problem,
                config,
                &counter,
                recorder,
            )
            .expect("pool has answer-bearing traces")
        };

    let review_tokens: u64 = flips.iter().map(|f| f.review_tokens).sum();
    report.ledger =
        TokenLedger::new(phase1.warmup_tokens, phase1.online_tokens, review_tokens, 0);
    report.final_answer = Some(pacer.winner.clone());
    report.pacer = Some(VoteSummary::from(&pacer));
    report.flips = flips;
    Ok(report)
}

/// Pre-revision support gap between the leader and the runner-up; the
/// leader's own support when it is the only candidate.
fn support_margin(
    support: &std::collections::BTreeMap<String, consensus::CandidateSupport>,
) -> Scalar {
    let ranked = consensus::top_n(support, support.len());
    match ranked.as_slice() {
        [] => 0.0,
        [only] => only.weighted_support,
        [first, second, ..] => first.weighted_support - second.weighted_support,
    }
}

fn original_votes(pool: &StablePool, mode: consensus::WeightMode) -> (Vec<CanonicalAnswer>, Vec<Scalar>) {
    let mut answers = Vec::new();
    let mut weights = Vec::new();
    for trace in &pool.entries {
        if let Some(answer) = &trace.answer {
            answers.push(answer.clone());
            weights.push(consensus::trace_weight(trace.stability, mode));
        }
    }
    (answers, weights)
}

/// Highest-stability completed warmup trace's answer, ties to the earliest.
/// Answerless traces are passed over: any answer beats no answer.
fn best_warmup_answer(warmup: &[Trace]) -> Option<String> {
    warmup
        .iter()
        .filter(|t| t.is_completed() && t.answer.is_some())
        .reduce(|best, t| if t.stability > best.stability { t } else { best })
        .and_then(|t| t.answer.as_ref().map(|a| a.canonical.clone()))
}

fn attempt_rows(attempts: &[AttemptOutcome], pool: &StablePool) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = attempts
        .iter()
        .map(|outcome| match outcome {
            AttemptOutcome::Trace(t) => TraceRow {
                trace_id: t.id,
                origin: t.origin,
                status: t.status.into(),
                stability: Some(t.stability),
                generated_tokens: t.generated_tokens,
                answer: t.answer.as_ref().map(|a| a.canonical.clone()),
                in_pool: pool.trace(t.id).is_some(),
            },
            AttemptOutcome::Failed { id, origin, tokens, .. } => TraceRow {
                trace_id: *id,
                origin: *origin,
                status: AttemptStatus::Failed,
                stability: None,
                generated_tokens: *tokens,
                answer: None,
                in_pool: false,
            },
        })
        .collect();
    rows.sort_by_key(|r| r.trace_id);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, ScriptedTrace};

    fn config(n_try: u32, n_init: u32) -> EngineConfig {
        EngineConfig {
            n_try,
            n_init,
            k: 1,
            parallel: 1,
            max_tokens: 200,
            l_rev: 32,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn unanimous_run_end_to_end() {
        let backend = MockBackend::ordered(vec![
            ScriptedTrace::with_answer(0.25, 1, 10, "42"),
            ScriptedTrace::with_answer(0.5, 1, 10, "42"),
            // review for the surviving warmup trace
            ScriptedTrace::with_answer(0.1, 1, 3, "42"),
        ]);
        let report = run(&config(2, 2), &backend, "p", "question", None).unwrap();
        assert_eq!(report.final_answer.as_deref(), Some("42"));
        assert!(!report.fallback);
        assert_eq!(report.pool_size, 1);
        assert_eq!(report.ledger.warmup_tokens, 20);
        assert_eq!(report.ledger.review_tokens, 3);
        assert_eq!(report.ledger.packet_tokens, 0);
        assert_eq!(report.stabilities.len(), 2);
        let online = report.online_baseline.unwrap();
        assert_eq!(online.winner, "42");
        assert_eq!(report.mv_baseline.unwrap().winner, "42");
    }

    #[test]
    fn skip_unanimous_saves_review_tokens() {
        let backend = MockBackend::ordered(vec![
            ScriptedTrace::with_answer(0.25, 1, 10, "42"),
            ScriptedTrace::with_answer(0.5, 1, 10, "42"),
        ]);
        let mut cfg = config(2, 2);
        cfg.skip_unanimous = true;
        let report = run(&cfg, &backend, "p", "question", None).unwrap();
        assert_eq!(report.ledger.review_tokens, 0);
        assert_eq!(report.final_answer.as_deref(), Some("42"));
        assert!(report.flips.is_empty());
    }

    #[test]
    fn answerless_pool_falls_back_to_best_warmup() {
        // Both warmup traces complete but neither has an extractable answer;
        // the pool exists yet yields no candidates.
        let backend = MockBackend::ordered(vec![
            ScriptedTrace::new(vec![("alpha ".into(), vec![-0.25]); 5]),
            ScriptedTrace::new(vec![("beta ".into(), vec![-0.5]); 5]),
        ]);
        let report = run(&config(2, 2), &backend, "p", "question", None).unwrap();
        assert!(report.fallback);
        assert_eq!(report.final_answer, None);
        assert_eq!(report.ledger.warmup_tokens, 10);
    }

    #[test]
    fn fallback_uses_highest_stability_answered_warmup() {
        // eta=10, n=2 → keep 1 → only the answerless u=0.125 trace is
        // pooled, so support has no candidates and the fallback kicks in.
        let backend = MockBackend::ordered(vec![
            ScriptedTrace::new(vec![("no answer ".into(), vec![-0.125]); 6]),
            ScriptedTrace::with_answer(0.5, 1, 6, "99"),
        ]);
        let report = run(&config(2, 2), &backend, "p", "question", None).unwrap();
        assert!(report.fallback);
        assert_eq!(report.final_answer.as_deref(), Some("99"));
        assert!(report.pacer.is_none());
    }

    #[test]
    fn report_json_is_deterministic() {
        let make = || {
            let backend = MockBackend::ordered(vec![
                ScriptedTrace::with_answer(0.25, 1, 10, "42"),
                ScriptedTrace::with_answer(0.5, 1, 10, "42"),
                ScriptedTrace::with_answer(0.1, 1, 3, "42"),
            ]);
            run(&config(2, 2), &backend, "p", "question", None).unwrap().to_json()
        };
        assert_eq!(make(), make());
    }
}
