//! Monte-Carlo and closed-form checks of the revision/voting analysis:
//! the repair-vs-damage condition, margin-conditioned accuracy gain, the
//! Chernoff-style vote-error bound, and the value-of-information exponent
//! comparison.

use rand::distributions::Distribution;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Real;
use crate::voting::{self, VoteMethod};

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("bound inapplicable: per-trace correctness must exceed 1/2, got {0}")]
    SubcriticalAccuracy(f64),
    #[error("invalid probability: {0}")]
    InvalidProbability(f64),
    #[error("invalid gain: p + delta = {0} exceeds 1")]
    GainOverflow(f64),
}

fn check_prob<F: Real>(x: F) -> Result<(), TheoryError> {
    if x < F::zero() || x > F::one() {
        return Err(TheoryError::InvalidProbability(x.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(())
}

/// The stabilizing condition: the prevalence-adjusted mass of repairs
/// dominates damages, (1−p)·α ≥ p·β.
pub fn stabilizing_check<F: Real>(p: F, alpha: F, beta: F) -> Result<bool, TheoryError> {
    check_prob(p)?;
    check_prob(alpha)?;
    check_prob(beta)?;
    Ok((F::one() - p) * alpha >= p * beta)
}

/// Post-review correctness by total probability: p·(1−β) + (1−p)·α.
pub fn post_review_accuracy<F: Real>(p: F, alpha: F, beta: F) -> Result<F, TheoryError> {
    check_prob(p)?;
    check_prob(alpha)?;
    check_prob(beta)?;
    Ok(p * (F::one() - beta) + (F::one() - p) * alpha)
}

/// Vote-error bound exp(−2·B·(p′ − 1/2)²); requires p′ > 1/2.
pub fn chernoff_bound<F: Real>(pool_size: u32, p_prime: F) -> Result<F, TheoryError> {
    check_prob(p_prime)?;
    let half = F::from_f64(0.5).expect("0.5 fits any float");
    if p_prime <= half {
        return Err(TheoryError::SubcriticalAccuracy(p_prime.to_f64().unwrap_or(f64::NAN)));
    }
    let b = F::from_u32(pool_size).expect("pool size fits in scalar");
    let gap = p_prime - half;
    Ok((-(b + b) * gap * gap).exp())
}

/// Exponent improvement from raising per-trace correctness p → p + δ:
/// 2·B·δ·(2p − 1 + δ). Equals the difference of the two bound exponents.
pub fn voi_exponent_gain<F: Real>(pool_size: u32, p: F, delta: F) -> Result<F, TheoryError> {
    check_prob(p)?;
    check_prob(delta)?;
    let one = F::one();
    let half = F::from_f64(0.5).expect("0.5 fits any float");
    if p + delta > one {
        return Err(TheoryError::GainOverflow((p + delta).to_f64().unwrap_or(f64::NAN)));
    }
    if p + delta <= half {
        return Err(TheoryError::SubcriticalAccuracy((p + delta).to_f64().unwrap_or(f64::NAN)));
    }
    let b = F::from_u32(pool_size).expect("pool size fits in scalar");
    let two = one + one;
    Ok(two * b * delta * (two * p - one + delta))
}

/// A monotone rate family over the consensus margin Δ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateFn {
    Const(f64),
    /// `below` for Δ < threshold, `above` for Δ ≥ threshold.
    Step { threshold: f64, below: f64, above: f64 },
    /// floor + (ceiling−floor) / (1 + exp(−steepness·(Δ−midpoint))).
    Logistic { midpoint: f64, steepness: f64, floor: f64, ceiling: f64 },
}

impl RateFn {
    pub fn eval(&self, margin: f64) -> f64 {
        match *self {
            RateFn::Const(v) => v,
            RateFn::Step { threshold, below, above } => {
                if margin >= threshold {
                    above
                } else {
                    below
                }
            }
            RateFn::Logistic { midpoint, steepness, floor, ceiling } => {
                floor + (ceiling - floor) / (1.0 + (-(steepness) * (margin - midpoint)).exp())
            }
        }
    }
}

/// Per-trace revision model: pre-review correctness plus margin-dependent
/// repair and damage rates.
#[derive(Debug, Clone, Copy)]
pub struct RevisionModel {
    pub p: f64,
    pub alpha: RateFn,
    pub beta: RateFn,
    /// Distinct wrong answers wrong votes scatter over.
    pub wrong_answer_arity: u32,
}

/// Pool model for the vote-error simulation.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleModel {
    pub pool_size: u32,
    pub p_prime: f64,
    pub wrong_answer_arity: u32,
    pub weights: WeightDistribution,
}

/// Per-trace vote-weight distribution. Unit weights match the unweighted
/// bound analysis; the log-normal mode probes robustness to weight spread.
#[derive(Debug, Clone, Copy)]
pub enum WeightDistribution {
    Unit,
    LogNormal { mu: f64, sigma: f64 },
}

/// Empirical estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl Estimate {
    fn from_successes(successes: u64, trials: u64) -> Self {
        let value = successes as f64 / trials as f64;
        Self { value, std_error: (value * (1.0 - value) / trials as f64).sqrt(), trials }
    }

    /// Two-sided 95% normal interval, clamped to [0, 1].
    pub fn ci95(&self) -> (f64, f64) {
        let delta = 1.96 * self.std_error;
        ((self.value - delta).max(0.0), (self.value + delta).min(1.0))
    }
}

/// Pre- and post-review empirical accuracies at one margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevisionEstimate {
    pub pre: Estimate,
    pub post: Estimate,
}

const BATCH: u64 = 16_384;

/// Deterministic batched Monte Carlo: trials split into fixed batches, each
/// batch on its own counter-derived RNG stream, merged by summation — the
/// result does not depend on the worker count.
fn batched_count(trials: u64, seed: u64, salt: u64, trial: impl Fn(&mut ChaCha8Rng) -> (bool, bool) + Sync) -> (u64, u64) {
    let batches = trials.div_ceil(BATCH);
    (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(batch));
            let lo = batch * BATCH;
            let hi = (lo + BATCH).min(trials);
            let mut first = 0u64;
            let mut second = 0u64;
            for _ in lo..hi {
                let (a, b) = trial(&mut rng);
                first += u64::from(a);
                second += u64::from(b);
            }
            (first, second)
        })
        .reduce(|| (0, 0), |x, y| (x.0 + y.0, x.1 + y.1))
}

/// Samples correctness and flip events at a fixed margin; reports empirical
/// pre- and post-review accuracy.
pub fn simulate_revision(
    model: &RevisionModel,
    margin: f64,
    trials: u64,
    seed: u64,
) -> RevisionEstimate {
    assert!(trials >= 1);
    let alpha = model.alpha.eval(margin);
    let beta = model.beta.eval(margin);
    let (pre, post) = batched_count(trials, seed, 1, |rng| {
        let correct = rng.gen::<f64>() < model.p;
        let post_correct = if correct {
            rng.gen::<f64>() >= beta // survives unless damaged
        } else {
            rng.gen::<f64>() < alpha // fixed when repaired
        };
        (correct, post_correct)
    });
    RevisionEstimate {
        pre: Estimate::from_successes(pre, trials),
        post: Estimate::from_successes(post, trials),
    }
}

/// Sweeps `simulate_revision` over a margin grid.
pub fn sweep_revision(
    model: &RevisionModel,
    margins: &[f64],
    trials: u64,
    seed: u64,
) -> Vec<(f64, RevisionEstimate)> {
    margins
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, simulate_revision(model, m, trials, seed.wrapping_add(i as u64))))
        .collect()
}

/// Simulates the confidence-weighted vote over a pool of independent voters:
/// each is correct with probability p′, wrong votes scatter uniformly over
/// `wrong_answer_arity` wrong answers, weights follow the configured
/// distribution, and the winner comes from the engine's own vote rule.
/// Returns the fraction of trials whose winner differs from the truth.
pub fn simulate_vote_error(model: &EnsembleModel, trials: u64, seed: u64) -> Estimate {
    assert!(trials >= 1);
    assert!(model.pool_size >= 1);
    assert!(model.wrong_answer_arity >= 1);
    let b = model.pool_size as usize;
    let (errors, _) = batched_count(trials, seed, 2, |rng| {
        let mut answers: Vec<u32> = Vec::with_capacity(b);
        let mut weights: Vec<f64> = Vec::with_capacity(b);
        for _ in 0..b {
            let correct = rng.gen::<f64>() < model.p_prime;
            // 0 is the truth; wrong answers are 1..=arity.
            let answer =
                if correct { 0 } else { rng.gen_range(1..=model.wrong_answer_arity) };
            answers.push(answer);
            weights.push(match model.weights {
                WeightDistribution::Unit => 1.0,
                WeightDistribution::LogNormal { mu, sigma } => {
                    rand_distr::LogNormal::new(mu, sigma)
                        .expect("valid log-normal parameters")
                        .sample(rng)
                }
            });
        }
        let vote = voting::cwv(&answers, &weights, VoteMethod::CwvRevised)
            .expect("non-empty pool");
        (vote.winner != 0, false)
    });
    Estimate::from_successes(errors, trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stabilizing_examples() {
        assert!(stabilizing_check(0.6, 0.5, 0.2).unwrap()); // 0.20 ≥ 0.12
        assert!(!stabilizing_check(0.9, 0.1, 0.5).unwrap()); // 0.01 < 0.45
        assert!(stabilizing_check(0.99, 0.7, 0.0).unwrap()); // zero damage
        assert!(stabilizing_check::<f64>(1.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn post_review_closed_form() {
        assert_relative_eq!(post_review_accuracy(0.6, 0.5, 0.2).unwrap(), 0.68, epsilon = 1e-15);
        assert_eq!(post_review_accuracy(0.7, 0.0, 0.0).unwrap(), 0.7);
        // Boundary of the stabilizing condition: post equals pre exactly.
        assert_eq!(post_review_accuracy(0.5, 0.5, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn chernoff_values() {
        assert_relative_eq!(chernoff_bound(10, 0.7).unwrap(), (-0.8f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(chernoff_bound(100, 0.6).unwrap(), (-2.0f64).exp(), epsilon = 1e-12);
        assert!(chernoff_bound(10, 0.5).is_err());
        // p′ → 1/2⁺ sends the bound to 1.
        assert!(chernoff_bound(10, 0.5 + 1e-9).unwrap() > 0.999_999);
    }

    #[test]
    fn voi_examples() {
        assert_relative_eq!(voi_exponent_gain(10, 0.55, 0.1).unwrap(), 0.4, epsilon = 1e-12);
        assert_eq!(voi_exponent_gain(10, 0.6, 0.0).unwrap(), 0.0);
        assert!(voi_exponent_gain(10, 0.55, 0.5).is_err());
        assert!(voi_exponent_gain(10, 0.3, 0.1).is_err());
    }

    #[test]
    fn rate_families_are_monotone() {
        let step = RateFn::Step { threshold: 1.0, below: 0.1, above: 0.7 };
        assert_eq!(step.eval(0.5), 0.1);
        assert_eq!(step.eval(1.0), 0.7);
        let logistic =
            RateFn::Logistic { midpoint: 0.0, steepness: 2.0, floor: 0.1, ceiling: 0.9 };
        assert!(logistic.eval(-5.0) < logistic.eval(0.0));
        assert!(logistic.eval(0.0) < logistic.eval(5.0));
        assert_relative_eq!(logistic.eval(0.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn revision_simulation_tracks_closed_form() {
        let model = RevisionModel {
            p: 0.6,
            alpha: RateFn::Const(0.5),
            beta: RateFn::Const(0.2),
            wrong_answer_arity: 3,
        };
        let est = simulate_revision(&model, 0.0, 200_000, 7);
        assert_relative_eq!(est.pre.value, 0.6, epsilon = 0.01);
        assert_relative_eq!(est.post.value, 0.68, epsilon = 0.01);
    }

    #[test]
    fn revision_simulation_is_seed_deterministic() {
        let model = RevisionModel {
            p: 0.6,
            alpha: RateFn::Const(0.5),
            beta: RateFn::Const(0.2),
            wrong_answer_arity: 3,
        };
        let a = simulate_revision(&model, 0.0, 50_000, 42);
        let b = simulate_revision(&model, 0.0, 50_000, 42);
        assert_eq!(a, b);
        let c = simulate_revision(&model, 0.0, 50_000, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn single_trial_is_zero_or_one() {
        let model = RevisionModel {
            p: 0.6,
            alpha: RateFn::Const(0.5),
            beta: RateFn::Const(0.2),
            wrong_answer_arity: 3,
        };
        let est = simulate_revision(&model, 0.0, 1, 5);
        assert!(est.pre.value == 0.0 || est.pre.value == 1.0);
        assert!(est.post.value == 0.0 || est.post.value == 1.0);
    }

    #[test]
    fn step_sweep_crosses_at_threshold() {
        let model = RevisionModel {
            p: 0.6,
            alpha: RateFn::Step { threshold: 1.0, below: 0.0, above: 0.6 },
            beta: RateFn::Step { threshold: 1.0, below: 0.8, above: 0.0 },
            wrong_answer_arity: 3,
        };
        for (margin, est) in sweep_revision(&model, &[0.0, 0.5, 1.0, 1.5], 100_000, 11) {
            if margin >= 1.0 {
                assert!(est.post.value >= est.pre.value);
            } else {
                assert!(est.post.value < est.pre.value);
            }
        }
    }

    #[test]
    fn vote_error_basics() {
        let single = EnsembleModel {
            pool_size: 1,
            p_prime: 0.7,
            wrong_answer_arity: 3,
            weights: WeightDistribution::Unit,
        };
        let est = simulate_vote_error(&single, 100_000, 3);
        assert_relative_eq!(est.value, 0.3, epsilon = 0.01);

        let perfect = EnsembleModel { p_prime: 1.0, ..single };
        assert_eq!(simulate_vote_error(&perfect, 10_000, 3).value, 0.0);
    }

    #[test]
    fn vote_error_within_bound() {
        let model = EnsembleModel {
            pool_size: 33,
            p_prime: 0.68,
            wrong_answer_arity: 3,
            weights: WeightDistribution::Unit,
        };
        let est = simulate_vote_error(&model, 50_000, 9);
        let bound = chernoff_bound(33, 0.68).unwrap();
        assert!(est.value <= bound + 3.0 * est.std_error);
    }

    #[test]
    fn lognormal_weights_still_concentrate() {
        let model = EnsembleModel {
            pool_size: 33,
            p_prime: 0.7,
            wrong_answer_arity: 3,
            weights: WeightDistribution::LogNormal { mu: 0.0, sigma: 0.5 },
        };
        let est = simulate_vote_error(&model, 20_000, 13);
        assert!(est.value < 0.1);
    }
}
