//! Weighted and unweighted plurality voting over answer keys.
//!
//! Generic over the key so the pipeline can vote over canonical answer
//! strings while the theory simulator votes over integer labels without
//! allocating.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum VoteError {
    #[error("no candidates: cannot vote over an empty answer list")]
    Empty,
    #[error("vote inputs misaligned: {answers} answers vs {weights} weights")]
    Misaligned { answers: usize, weights: usize },
}

/// Which rule produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMethod {
    CwvRevised,
    CwvOriginal,
    Mv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult<K, F> {
    pub winner: K,
    pub tally: BTreeMap<K, F>,
    pub counts: BTreeMap<K, usize>,
    pub method: VoteMethod,
}

/// Confidence-weighted vote: winner = argmax of summed weights, ties broken
/// by larger supporter count, then by the smaller key.
pub fn cwv<K, F>(answers: &[K], weights: &[F], method: VoteMethod) -> Result<VoteResult<K, F>, VoteError>
where
    K: Ord + Clone,
    F: Real,
{
    if answers.is_empty() {
        return Err(VoteError::Empty);
    }
    if answers.len() != weights.len() {
        return Err(VoteError::Misaligned { answers: answers.len(), weights: weights.len() });
    }
    let mut tally: BTreeMap<K, F> = BTreeMap::new();
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    for (answer, weight) in answers.iter().zip(weights) {
        let entry = tally.entry(answer.clone()).or_insert_with(F::zero);
        *entry = *entry + *weight;
        *counts.entry(answer.clone()).or_insert(0) += 1;
    }
    let winner = pick_winner(&tally, &counts);
    Ok(VoteResult { winner, tally, counts, method })
}

/// Majority vote: most frequent key, same tie rule as [`cwv`].
pub fn mv<K, F>(answers: &[K]) -> Result<VoteResult<K, F>, VoteError>
where
    K: Ord + Clone,
    F: Real,
{
    let unit: Vec<F> = vec![F::one(); answers.len()];
    cwv(answers, &unit, VoteMethod::Mv)
}

fn pick_winner<K: Ord + Clone, F: Real>(
    tally: &BTreeMap<K, F>,
    counts: &BTreeMap<K, usize>,
) -> K {
    let mut best: Option<(&K, F, usize)> = None;
    for (key, &t) in tally {
        let c = counts[key];
        let better = match &best {
            None => true,
            Some((bk, bt, bc)) => {
                // BTreeMap iterates keys ascending, so on full ties the
                // earlier (smaller) key wins by never being replaced.
                t > *bt || (t == *bt && (c > *bc || (c == *bc && key < bk)))
            }
        };
        if better {
            best = Some((key, t, c));
        }
    }
    best.expect("tally non-empty").0.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_argmax() {
        let r = cwv(&["A", "A", "B"], &[0.6, 0.5, 0.9], VoteMethod::CwvOriginal).unwrap();
        assert_eq!(r.winner, "A");
        assert_eq!(r.tally["A"], 0.6 + 0.5);
        assert_eq!(r.tally["B"], 0.9);
        assert_eq!(r.counts["A"], 2);
    }

    #[test]
    fn unit_weights_reduce_to_majority() {
        let answers = ["x", "y", "x", "z", "x", "y"];
        let unit = vec![1.0; answers.len()];
        let weighted = cwv(&answers, &unit, VoteMethod::CwvOriginal).unwrap();
        let majority = mv::<_, f64>(&answers).unwrap();
        assert_eq!(weighted.winner, majority.winner);
        assert_eq!(weighted.tally, majority.tally);
    }

    #[test]
    fn single_voter_wins() {
        let r = cwv(&["only"], &[0.1], VoteMethod::CwvRevised).unwrap();
        assert_eq!(r.winner, "only");
    }

    #[test]
    fn tie_breaks_on_count_then_lex() {
        // Equal tallies, unequal counts: B has two supporters.
        let r = cwv(&["A", "B", "B"], &[1.0, 0.5, 0.5], VoteMethod::CwvOriginal).unwrap();
        assert_eq!(r.winner, "B");
        // Full tie: lexicographically smaller answer.
        let r = mv::<_, f64>(&["B", "A"]).unwrap();
        assert_eq!(r.winner, "A");
    }

    #[test]
    fn empty_and_misaligned_are_errors() {
        assert_eq!(cwv::<&str, f64>(&[], &[], VoteMethod::Mv).unwrap_err(), VoteError::Empty);
        assert!(matches!(
            cwv(&["a"], &[1.0, 2.0], VoteMethod::Mv).unwrap_err(),
            VoteError::Misaligned { .. }
        ));
    }

    #[test]
    fn mv_plurality() {
        let r = mv::<_, f64>(&["A", "A", "B"]).unwrap();
        assert_eq!(r.winner, "A");
    }
}
