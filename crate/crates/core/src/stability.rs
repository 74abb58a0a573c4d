//! Token-level uncertainty and prefix-stability tracking.
//!
//! For each decoding step the backend reports the top-k log-probabilities.
//! The per-step uncertainty is the negated mean of those logprobs; a sliding
//! window smooths it, and the negated running maximum of the windowed value
//! is the prefix stability `S_t`. `S_t` is non-increasing by construction,
//! which is what makes the early-stop rule in [`crate::screening`] final.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    /// A decoding step arrived without any top-k logprobs.
    #[error("malformed step: {0}")]
    MalformedStep(&'static str),
    /// `finalize` was called before any step was observed.
    #[error("empty trace: no decoding steps were observed")]
    EmptyTrace,
}

/// One decoding step: the sampled token plus the top-k logprobs at that step.
///
/// Logprobs are natural-log probabilities sorted non-increasing; entries past
/// the monitor's configured `k` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep<F> {
    /// 1-based decoding step index.
    #[serde(rename = "t")]
    pub step_index: u64,
    #[serde(rename = "token")]
    pub token_text: String,
    pub topk_logprobs: Vec<F>,
}

impl<F: Real> TokenStep<F> {
    pub fn new(step_index: u64, token_text: impl Into<String>, topk_logprobs: Vec<F>) -> Self {
        Self { step_index, token_text: token_text.into(), topk_logprobs }
    }

    /// Checks the declared invariants: non-empty, sorted non-increasing,
    /// every entry finite and ≤ 0, and exactly `k` entries.
    pub fn validate(&self, k: usize) -> Result<(), StabilityError> {
        if self.topk_logprobs.is_empty() {
            return Err(StabilityError::MalformedStep("empty logprob list"));
        }
        if self.topk_logprobs.len() != k {
            return Err(StabilityError::MalformedStep("logprob list length differs from k"));
        }
        let zero = F::zero();
        for pair in self.topk_logprobs.windows(2) {
            if pair[0] < pair[1] {
                return Err(StabilityError::MalformedStep("logprobs not sorted non-increasing"));
            }
        }
        if self.topk_logprobs.iter().any(|lp| !lp.is_finite() || *lp > zero) {
            return Err(StabilityError::MalformedStep("logprob not a finite value ≤ 0"));
        }
        Ok(())
    }
}

/// Per-step uncertainty: the negated mean of the first `min(k, len)` logprobs.
///
/// Entries beyond index `k` are truncated before averaging, so the result is
/// invariant to extra alternatives a backend may report.
pub fn step_uncertainty<F: Real>(topk_logprobs: &[F], k: usize) -> Result<F, StabilityError> {
    if topk_logprobs.is_empty() || k == 0 {
        return Err(StabilityError::MalformedStep("empty logprob list"));
    }
    let take = k.min(topk_logprobs.len());
    let mut sum = F::zero();
    for lp in &topk_logprobs[..take] {
        sum = sum + *lp;
    }
    Ok(-(sum / F::from_usize(take).expect("window length fits in scalar")))
}

/// Streaming monitor for one trace. Single-owner: one monitor per stream.
#[derive(Debug, Clone)]
pub struct StabilityMonitor<F> {
    window_size: usize,
    k: usize,
    /// Last `min(t, W)` per-step uncertainties, oldest first.
    window_buffer: VecDeque<F>,
    step_count: u64,
    prefix_max_instability: F,
    uncertainty: Vec<F>,
    windowed: Vec<F>,
    stability: Vec<F>,
}

/// Completed per-step record of (U_t, Ū_t, S_t) plus the final stability.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityTrajectory<F> {
    pub uncertainty: Vec<F>,
    pub windowed: Vec<F>,
    pub stability: Vec<F>,
    pub final_stability: F,
}

impl<F: Real> StabilityMonitor<F> {
    /// `window_size` (W) and `k` must both be ≥ 1.
    pub fn new(window_size: usize, k: usize) -> Self {
        assert!(window_size >= 1, "window size must be ≥ 1");
        assert!(k >= 1, "k must be ≥ 1");
        Self {
            window_size,
            k,
            window_buffer: VecDeque::with_capacity(window_size.min(4096)),
            step_count: 0,
            prefix_max_instability: F::neg_infinity(),
            uncertainty: Vec::new(),
            windowed: Vec::new(),
            stability: Vec::new(),
        }
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of steps observed so far.
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Feeds one step and returns `(Ū_t, S_t)`.
    ///
    /// Partial windows (t < W) average over the available steps. The window
    /// mean is re-summed from the buffer in chronological order on every
    /// step, so a streamed trace and an offline recomputation of the same
    /// steps agree exactly, not just to rounding.
    pub fn update(&mut self, step: &TokenStep<F>) -> Result<(F, F), StabilityError> {
        let u = step_uncertainty(&step.topk_logprobs, self.k)?;
        if self.window_buffer.len() == self.window_size {
            self.window_buffer.pop_front();
        }
        self.window_buffer.push_back(u);
        self.step_count += 1;

        let mut sum = F::zero();
        for v in &self.window_buffer {
            sum = sum + *v;
        }
        let len = F::from_usize(self.window_buffer.len()).expect("window length fits in scalar");
        let windowed = sum / len;
        if windowed > self.prefix_max_instability {
            self.prefix_max_instability = windowed;
        }
        let stability = -self.prefix_max_instability;

        self.uncertainty.push(u);
        self.windowed.push(windowed);
        self.stability.push(stability);
        Ok((windowed, stability))
    }

    /// Current S_t, or None before the first step.
    pub fn current_stability(&self) -> Option<F> {
        self.stability.last().copied()
    }

    pub fn finalize(self) -> Result<StabilityTrajectory<F>, StabilityError> {
        let final_stability = *self.stability.last().ok_or(StabilityError::EmptyTrace)?;
        Ok(StabilityTrajectory {
            uncertainty: self.uncertainty,
            windowed: self.windowed,
            stability: self.stability,
            final_stability,
        })
    }
}

impl<F: Real> StabilityTrajectory<F> {
    /// Recomputes a trajectory from recorded steps in one pass.
    pub fn from_steps(
        steps: &[TokenStep<F>],
        window_size: usize,
        k: usize,
    ) -> Result<Self, StabilityError> {
        let mut monitor = StabilityMonitor::new(window_size, k);
        for step in steps {
            monitor.update(step)?;
        }
        monitor.finalize()
    }

    pub fn len(&self) -> usize {
        self.stability.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stability.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn step(logprobs: &[f64]) -> TokenStep<f64> {
        TokenStep::new(1, "x", logprobs.to_vec())
    }

    #[test]
    fn certainty_gives_zero_uncertainty() {
        assert_eq!(step_uncertainty(&[0.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_two_way_split_gives_ln_two() {
        let u = step_uncertainty(&[0.5_f64.ln(), 0.5_f64.ln()], 2).unwrap();
        assert_relative_eq!(u, std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn half_quarter_split_matches_hand_value() {
        let u = step_uncertainty(&[0.5_f64.ln(), 0.25_f64.ln()], 2).unwrap();
        assert_relative_eq!(u, 1.0397, max_relative = 1e-4);
    }

    #[test]
    fn empty_logprobs_is_malformed() {
        assert_eq!(
            step_uncertainty::<f64>(&[], 1),
            Err(StabilityError::MalformedStep("empty logprob list"))
        );
    }

    #[test]
    fn truncates_entries_beyond_k() {
        let short = step_uncertainty(&[-1.0, -2.0], 2).unwrap();
        let long = step_uncertainty(&[-1.0, -2.0, -50.0, -60.0], 2).unwrap();
        assert_eq!(short, long);
    }

    /// Feeds a raw U series through the monitor via k=1 single-logprob steps.
    fn run_series(u: &[f64], w: usize) -> StabilityMonitor<f64> {
        let mut m = StabilityMonitor::new(w, 1);
        for (i, &v) in u.iter().enumerate() {
            m.update(&TokenStep::new(i as u64 + 1, "x", vec![-v])).unwrap();
        }
        m
    }

    #[test]
    fn window_mean_over_last_w_steps() {
        let m = run_series(&[1.0, 2.0, 3.0, 4.0], 3);
        assert_eq!(*m.windowed.last().unwrap(), 3.0);
    }

    #[test]
    fn partial_window_averages_available_steps() {
        let m = run_series(&[1.0, 2.0], 3);
        assert_eq!(*m.windowed.last().unwrap(), 1.5);
    }

    #[test]
    fn constant_series_is_fixed_point() {
        let m = run_series(&[0.25, 0.25, 0.25], 2);
        assert_eq!(m.windowed, vec![0.25, 0.25, 0.25]);
        assert_eq!(m.stability, vec![-0.25, -0.25, -0.25]);
    }

    #[test]
    fn finalize_prefix_max() {
        // Ū series [1,3,2] with W=1 → S series [-1,-3,-3].
        let t = run_series(&[1.0, 3.0, 2.0], 1).finalize().unwrap();
        assert_eq!(t.stability, vec![-1.0, -3.0, -3.0]);
        assert_eq!(t.final_stability, -3.0);
    }

    #[test]
    fn finalize_single_step() {
        let t = run_series(&[2.0], 1).finalize().unwrap();
        assert_eq!(t.final_stability, -2.0);
    }

    #[test]
    fn finalize_empty_is_error() {
        let m = StabilityMonitor::<f64>::new(8, 1);
        assert_eq!(m.finalize().unwrap_err(), StabilityError::EmptyTrace);
    }

    #[test]
    fn monotone_increasing_windowed_means_strictly_decreasing_stability() {
        let t = run_series(&[1.0, 2.0, 3.0, 4.0], 1).finalize().unwrap();
        for pair in t.stability.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn validate_rejects_unsorted_and_positive() {
        assert!(step(&[-2.0, -1.0]).validate(2).is_err());
        assert!(step(&[0.5, -1.0]).validate(2).is_err());
        assert!(step(&[-1.0, f64::NAN]).validate(2).is_err());
        assert!(step(&[-1.0, -2.0]).validate(3).is_err());
        assert!(step(&[-1.0, -2.0]).validate(2).is_ok());
    }

    fn logprob_stream() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, usize)> {
        let k = prop_oneof![Just(1usize), Just(5), Just(20)];
        let w = prop_oneof![Just(1usize), Just(8), Just(64)];
        (k, w, 1usize..128).prop_flat_map(|(k, w, len)| {
            (
                proptest::collection::vec(
                    proptest::collection::vec(-8.0f64..=0.0, k).prop_map(|mut v| {
                        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        v
                    }),
                    len,
                ),
                Just(k),
                Just(w),
            )
        })
    }

    proptest! {
        #[test]
        fn stability_never_increases((stream, k, w) in logprob_stream()) {
            let mut m = StabilityMonitor::new(w, k);
            let mut prev = f64::INFINITY;
            for (i, lps) in stream.iter().enumerate() {
                let (_, s) = m.update(&TokenStep::new(i as u64 + 1, "x", lps.clone())).unwrap();
                prop_assert!(s <= prev);
                prop_assert!(s <= 0.0);
                prev = s;
            }
        }

        #[test]
        fn online_equals_offline_exactly((stream, k, w) in logprob_stream()) {
            let steps: Vec<TokenStep<f64>> = stream
                .iter()
                .enumerate()
                .map(|(i, lps)| TokenStep::new(i as u64 + 1, "x", lps.clone()))
                .collect();
            let mut m = StabilityMonitor::new(w, k);
            for s in &steps {
                m.update(s).unwrap();
            }
            let online = m.finalize().unwrap();

            // Naive offline recomputation over the stored list.
            let u: Vec<f64> = steps
                .iter()
                .map(|s| -(s.topk_logprobs[..k].iter().sum::<f64>() / k as f64))
                .collect();
            let mut max_so_far = f64::NEG_INFINITY;
            for (t, expected_u) in u.iter().enumerate() {
                let lo = (t + 1).saturating_sub(w);
                let mean = u[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64;
                max_so_far = max_so_far.max(mean);
                prop_assert_eq!(online.uncertainty[t], *expected_u);
                prop_assert_eq!(online.windowed[t], mean);
                prop_assert_eq!(online.stability[t], -max_so_far);
            }
            prop_assert_eq!(online.final_stability, -max_so_far);
        }

        #[test]
        fn uncertainty_nonnegative(lps in proptest::collection::vec(-12.0f64..=0.0, 1..24), k in 1usize..24) {
            let mut sorted = lps;
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assert!(step_uncertainty(&sorted, k).unwrap() >= 0.0);
        }
    }
}
