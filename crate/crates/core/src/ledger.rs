//! Exact generated-token accounting.
//!
//! Every token any backend stream yields during a run lands in exactly one
//! component: warmup, online attempts (discarded prefixes included), reviews,
//! or packet construction. Packets are built by deterministic truncation, so
//! `packet_tokens` is always zero here — the coordination signal itself costs
//! nothing.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub warmup_tokens: u64,
    pub online_attempt_tokens: u64,
    pub review_tokens: u64,
    pub packet_tokens: u64,
    pub total: u64,
}

impl TokenLedger {
    pub fn new(
        warmup_tokens: u64,
        online_attempt_tokens: u64,
        review_tokens: u64,
        packet_tokens: u64,
    ) -> Self {
        Self {
            warmup_tokens,
            online_attempt_tokens,
            review_tokens,
            packet_tokens,
            total: warmup_tokens + online_attempt_tokens + review_tokens + packet_tokens,
        }
    }
}
