//! Run reports and the accuracy-versus-tokens aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::TokenLedger;
use crate::revision::RevisionOutcome;
use crate::screening::{TraceOrigin, TraceStatus};
use crate::voting::VoteResult;
use crate::Scalar;

pub const REPORT_VERSION: u32 = 1;

/// A vote outcome flattened for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub winner: String,
    pub tally: BTreeMap<String, Scalar>,
    pub counts: BTreeMap<String, usize>,
}

impl From<&VoteResult<String, Scalar>> for VoteSummary {
    fn from(vote: &VoteResult<String, Scalar>) -> Self {
        Self { winner: vote.winner.clone(), tally: vote.tally.clone(), counts: vote.counts.clone() }
    }
}

/// Per-attempt stability row, early-stopped and failed attempts included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trace_id: u64,
    pub origin: TraceOrigin,
    pub status: AttemptStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<Scalar>,
    pub generated_tokens: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub in_pool: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Completed,
    EarlyStopped,
    Failed,
}

impl From<TraceStatus> for AttemptStatus {
    fn from(status: TraceStatus) -> Self {
        match status {
            TraceStatus::Completed => AttemptStatus::Completed,
            TraceStatus::EarlyStopped => AttemptStatus::EarlyStopped,
        }
    }
}

/// Everything one pipeline run produced. Serialization is deterministic:
/// maps are ordered and rows sort by trace id, so identical runs give
/// byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub problem_id: String,
    pub n_try: u32,
    /// The engine's answer (the revised-vote winner, or the fallback).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    /// True when the pool was unusable and the best warmup answer was used.
    pub fallback: bool,
    pub pool_size: usize,
    /// Pre-revision support gap between the leading answer and the runner-up
    /// (the leader's full support when it is the only candidate).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<Scalar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Scalar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pacer: Option<VoteSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub online_baseline: Option<VoteSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mv_baseline: Option<VoteSummary>,
    pub flips: Vec<RevisionOutcome>,
    pub stabilities: Vec<TraceRow>,
    pub ledger: TokenLedger,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(&mut out, format!("problem: {}", self.problem_id));
        push(
            &mut out,
            format!(
                "final answer: {}{}",
                self.final_answer.as_deref().unwrap_or("<none>"),
                if self.fallback { "  (fallback: best warmup trace)" } else { "" }
            ),
        );
        push(&mut out, format!("pool size: {}", self.pool_size));
        if let Some(threshold) = self.threshold {
            push(&mut out, format!("stability threshold: {threshold}"));
        }
        if let Some(margin) = self.margin {
            push(&mut out, format!("pre-revision margin: {margin}"));
        }
        for (name, vote) in [
            ("pacer", &self.pacer),
            ("online", &self.online_baseline),
            ("mv", &self.mv_baseline),
        ] {
            if let Some(v) = vote {
                let tally: Vec<String> =
                    v.tally.iter().map(|(a, w)| format!("{a}={w:.6}")).collect();
                push(&mut out, format!("{name:>7}: {}  [{}]", v.winner, tally.join(", ")));
            }
        }
        let flipped = self.flips.iter().filter(|f| f.flipped).count();
        push(&mut out, format!("reviews: {} ({flipped} flipped)", self.flips.len()));
        push(
            &mut out,
            format!(
                "tokens: warmup={} online={} review={} packet={} total={}",
                self.ledger.warmup_tokens,
                self.ledger.online_attempt_tokens,
                self.ledger.review_tokens,
                self.ledger.packet_tokens,
                self.ledger.total
            ),
        );
        out
    }
}

/// One aggregated accuracy/cost row.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub method: &'static str,
    pub n_try: u32,
    pub accuracy: f64,
    pub mean_total_tokens: f64,
    pub runs: usize,
}

/// Aggregates reports into accuracy-versus-tokens rows, one per
/// (method, attempt budget). Reports whose problem id has no ground truth
/// are skipped and reported back as warnings.
pub fn pareto(
    reports: &[RunReport],
    truth: &BTreeMap<String, String>,
) -> (Vec<ParetoRow>, Vec<String>) {
    struct Cell {
        correct: usize,
        tokens: u64,
        runs: usize,
    }
    let mut cells: BTreeMap<(&'static str, u32), Cell> = BTreeMap::new();
    let mut warnings = Vec::new();
    for report in reports {
        let Some(expected) = truth.get(&report.problem_id) else {
            warnings.push(format!(
                "problem {:?} has no ground-truth answer; skipped",
                report.problem_id
            ));
            continue;
        };
        let methods: [(&'static str, Option<&str>); 3] = [
            ("pacer", report.final_answer.as_deref()),
            ("online", report.online_baseline.as_ref().map(|v| v.winner.as_str())),
            ("mv", report.mv_baseline.as_ref().map(|v| v.winner.as_str())),
        ];
        for (method, answer) in methods {
            let cell = cells
                .entry((method, report.n_try))
                .or_insert(Cell { correct: 0, tokens: 0, runs: 0 });
            cell.runs += 1;
            cell.tokens += report.ledger.total;
            if answer == Some(expected.as_str()) {
                cell.correct += 1;
            }
        }
    }
    let rows = cells
        .into_iter()
        .map(|((method, n_try), cell)| ParetoRow {
            method,
            n_try,
            accuracy: cell.correct as f64 / cell.runs as f64,
            mean_total_tokens: cell.tokens as f64 / cell.runs as f64,
            runs: cell.runs,
        })
        .collect();
    (rows, warnings)
}

/// Renders pareto rows as CSV with a fixed header.
pub fn pareto_csv(rows: &[ParetoRow]) -> String {
    let mut out = String::from("method,n_try,accuracy,mean_total_tokens,runs\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.method, row.n_try, row.accuracy, row.mean_total_tokens, row.runs
        ));
    }
    out
}
