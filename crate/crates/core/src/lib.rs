//! Confidence-screened parallel sampling with one consensus-conditioned
//! revision round, for any streaming LLM backend that reports per-token
//! top-k logprobs.
//!
//! The pipeline runs in two phases. Phase one decodes warmup traces to
//! completion, fixes a stability threshold at a tail percentile, and then
//! monitors every further attempt token-by-token, cancelling it the moment
//! its prefix stability falls below the threshold. Phase two summarizes the
//! surviving pool into a bounded consensus packet (top answers, weighted
//! support shares, one truncated representative rationale each), lets every
//! pool trace run one short review conditioned on that packet, and picks the
//! final answer by a confidence-weighted vote over the revised answers.
//!
//! The numeric kernels (uncertainty statistics, thresholds, vote weights,
//! closed-form bounds) are generic over the scalar type via `num-traits`;
//! the pipeline instantiates them at [`Scalar`] through the aliases below.
//! A deterministic scripted mock and a record/replay store make whole runs
//! reproducible without a serving endpoint, and [`theory`] checks the
//! aggregate-accuracy claims by Monte Carlo at desk scale.

pub mod backend;
pub mod config;
pub mod consensus;
pub mod extract;
pub mod ledger;
pub mod pipeline;
pub mod report;
pub mod revision;
pub mod scalar;
pub mod screening;
pub mod stability;
pub mod theory;
pub mod voting;

/// The pipeline's concrete scalar.
pub type Scalar = f64;

/// One decoding step at the pipeline scalar.
pub type TokenStep = stability::TokenStep<Scalar>;
/// Streaming stability monitor at the pipeline scalar.
pub type StabilityMonitor = stability::StabilityMonitor<Scalar>;
/// Completed stability trajectory at the pipeline scalar.
pub type StabilityTrajectory = stability::StabilityTrajectory<Scalar>;
/// Screening threshold at the pipeline scalar.
pub type Threshold = screening::Threshold<Scalar>;
/// Vote result over canonical answers at the pipeline scalar.
pub type VoteResult = voting::VoteResult<String, Scalar>;
