//! Answer support, Top-N candidate selection, and the consensus packet.
//!
//! The packet is the low-bandwidth peer evidence each trace reviews against:
//! the Top-N answers by weighted support, each with its support share and
//! one truncated representative rationale. Its size is O(N·L_sum) — it does
//! not grow with the pool.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::extract::CanonicalAnswer;
use crate::scalar::Real;
use crate::screening::{StablePool, Trace};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("empty pool: no completed traces to aggregate")]
    EmptyPool,
    #[error("no candidates: no pool trace has an extractable answer")]
    NoCandidates,
}

/// How a trace's stability becomes its vote weight.
///
/// Raw stabilities are ≤ 0, so summing them makes support *decrease* as
/// supporters are added; the exp transform keeps the stability ordering while
/// making support additive. `RawStability` restores the literal behavior for
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    ExpStability { temperature: Scalar },
    RawStability,
}

/// exp(stability / temperature): strictly increasing in stability, always
/// positive.
pub fn vote_weight<F: Real>(stability: F, temperature: F) -> F {
    (stability / temperature).exp()
}

/// A trace's weight under the configured mode.
pub fn trace_weight(stability: Scalar, mode: WeightMode) -> Scalar {
    match mode {
        WeightMode::ExpStability { temperature } => vote_weight(stability, temperature),
        WeightMode::RawStability => stability,
    }
}

/// Aggregated support for one candidate answer.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSupport {
    pub answer: CanonicalAnswer,
    pub weighted_support: Scalar,
    pub count: usize,
    pub representative_trace_id: u64,
}

/// Weighted support per canonical answer. Traces without an answer
/// contribute to no bucket. The representative is the highest-stability
/// supporter, ties broken by earliest trace id.
pub fn support(
    pool: &StablePool,
    mode: WeightMode,
) -> Result<BTreeMap<String, CandidateSupport>, ConsensusError> {
    if pool.is_empty() {
        return Err(ConsensusError::EmptyPool);
    }
    let mut map: BTreeMap<String, CandidateSupport> = BTreeMap::new();
    let mut rep_stability: BTreeMap<String, Scalar> = BTreeMap::new();
    for trace in &pool.entries {
        let Some(answer) = &trace.answer else { continue };
        let weight = trace_weight(trace.stability, mode);
        let key = answer.canonical.clone();
        match map.get_mut(&key) {
            None => {
                rep_stability.insert(key.clone(), trace.stability);
                map.insert(
                    key,
                    CandidateSupport {
                        answer: answer.clone(),
                        weighted_support: weight,
                        count: 1,
                        representative_trace_id: trace.id,
                    },
                );
            }
            Some(entry) => {
                entry.weighted_support += weight;
                entry.count += 1;
                // Pool iteration is id-ascending, so strict improvement
                // keeps the earliest trace on ties.
                let best = rep_stability.get_mut(&key).expect("tracked with entry");
                if trace.stability > *best {
                    *best = trace.stability;
                    entry.representative_trace_id = trace.id;
                }
            }
        }
    }
    if map.is_empty() {
        return Err(ConsensusError::NoCandidates);
    }
    Ok(map)
}

/// The min(n, candidates) entries with the largest weighted support,
/// descending; ties broken by larger count, then smaller canonical answer.
pub fn top_n(
    support_map: &BTreeMap<String, CandidateSupport>,
    n: usize,
) -> Vec<CandidateSupport> {
    let mut candidates: Vec<&CandidateSupport> = support_map.values().collect();
    candidates.sort_by(|a, b| {
        b.weighted_support
            .partial_cmp(&a.weighted_support)
            .expect("supports are ordered")
            .then_with(|| b.count.cmp(&a.count))
            .then_with(|| a.answer.canonical.cmp(&b.answer.canonical))
    });
    candidates.into_iter().take(n).cloned().collect()
}

/// The maximum-stability trace supporting `canonical`, ties broken by
/// earliest trace id.
pub fn representative<'a>(pool: &'a StablePool, canonical: &str) -> Option<&'a Trace> {
    pool.entries
        .iter()
        .filter(|t| t.answer.as_ref().is_some_and(|a| a.canonical == canonical))
        .reduce(|best, t| if t.stability > best.stability { t } else { best })
}

/// Token accounting used for packet budgets when the backend exposes no
/// tokenizer: whitespace-delimited words, capped at four characters per
/// token.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
    /// True when `text` fits a `budget`-token allowance.
    fn fits(&self, text: &str, budget: usize) -> bool;
    /// Byte offset where the longest in-budget tail of `text` begins.
    fn tail_start(&self, text: &str, budget: usize) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokens;

impl WhitespaceTokens {
    const CHARS_PER_TOKEN: usize = 4;

    /// (start byte offset, chars before the word) for every word.
    fn word_starts(text: &str) -> (Vec<(usize, usize)>, usize) {
        let mut starts = Vec::new();
        let mut chars_seen = 0usize;
        let mut in_word = false;
        for (byte, c) in text.char_indices() {
            if c.is_whitespace() {
                in_word = false;
            } else if !in_word {
                in_word = true;
                starts.push((byte, chars_seen));
            }
            chars_seen += 1;
        }
        (starts, chars_seen)
    }
}

impl TokenCounter for WhitespaceTokens {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn fits(&self, text: &str, budget: usize) -> bool {
        self.count(text) <= budget && text.chars().count() <= Self::CHARS_PER_TOKEN * budget
    }

    fn tail_start(&self, text: &str, budget: usize) -> usize {
        let (starts, total_chars) = Self::word_starts(text);
        let char_cap = Self::CHARS_PER_TOKEN * budget;
        let n = starts.len();
        // Earliest word start whose suffix respects both budgets.
        for (i, &(byte, chars_before)) in starts.iter().enumerate() {
            let words = n - i;
            let chars = total_chars - chars_before;
            if words <= budget && chars <= char_cap {
                return byte;
            }
        }
        // Even a single word overflows the char cap: cut inside it.
        let skip = total_chars.saturating_sub(char_cap);
        text.char_indices().nth(skip).map_or(text.len(), |(b, _)| b)
    }
}

/// Deterministic tail-keeping truncation: text within budget is returned
/// verbatim; otherwise the last `budget` tokens, prefixed with `[...] `
/// (the marker is excluded from the budget check on the kept tail).
pub fn truncate_tail(text: &str, budget: usize, counter: &dyn TokenCounter) -> String {
    if counter.fits(text, budget) {
        return text.to_string();
    }
    let start = counter.tail_start(text, budget);
    format!("[...] {}", &text[start..])
}

/// One packet line: a candidate answer with its share and rationale.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketEntry {
    pub answer: CanonicalAnswer,
    pub weighted_support: Scalar,
    /// V(a) / total pool weight, in [0, 1].
    pub support_share: Scalar,
    pub rationale: String,
}

/// Bounded summary of the pool: at most `n_top` entries ordered by support,
/// each rationale within `sum_budget` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusPacket {
    pub entries: Vec<PacketEntry>,
    pub n_top: usize,
    pub sum_budget: usize,
}

impl ConsensusPacket {
    /// True when a single candidate holds the entire pool weight.
    pub fn is_unanimous(&self) -> bool {
        self.entries.len() == 1 && self.entries[0].support_share >= 1.0
    }
}

pub fn build_packet(
    pool: &StablePool,
    n: usize,
    l_sum: usize,
    mode: WeightMode,
    counter: &dyn TokenCounter,
) -> Result<ConsensusPacket, ConsensusError> {
    let support_map = support(pool, mode)?;
    let mut total_weight: Scalar = 0.0;
    for trace in &pool.entries {
        total_weight += trace_weight(trace.stability, mode);
    }
    let entries = top_n(&support_map, n)
        .into_iter()
        .map(|c| {
            let rep = pool
                .trace(c.representative_trace_id)
                .expect("representative comes from the pool");
            PacketEntry {
                support_share: if total_weight == 0.0 {
                    0.0
                } else {
                    c.weighted_support / total_weight
                },
                rationale: truncate_tail(&rep.text, l_sum, counter),
                answer: c.answer,
                weighted_support: c.weighted_support,
            }
        })
        .collect();
    Ok(ConsensusPacket { entries, n_top: n, sum_budget: l_sum })
}

/// Renders the packet as its stable text contract: one line per entry,
/// `Candidate {i}: answer={a}; support={share}%; representative reasoning:
/// {rationale}`, descending support, byte-identical for identical packets.
/// Newlines inside rationales become spaces to keep one entry per line.
pub fn render_packet(packet: &ConsensusPacket) -> String {
    let mut lines = Vec::with_capacity(packet.entries.len());
    for (i, entry) in packet.entries.iter().enumerate() {
        let pct = (entry.support_share * 100.0).round_ties_even() as i64;
        let rationale: String = entry
            .rationale
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        lines.push(format!(
            "Candidate {}: answer={}; support={}%; representative reasoning: {}",
            i + 1,
            entry.answer.canonical,
            pct,
            rationale
        ));
    }
    lines.join("\n")
}
