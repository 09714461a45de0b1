//! Rational reaction sets and Nash / Stackelberg certification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::oracle::{
    bellman_residual, evaluate_high_policy, solve_fixed_point, HighLevelModel, LowLevelModel,
};
use crate::policy::{greedy_indices, greedy_policy, one_hot_policy};
use crate::qlearning::QTablePair;
use crate::table::Table;

/// Largest number of pure high-level policies the Stackelberg check enumerates.
pub const STACKELBERG_ENUMERATION_CAP: u128 = 1_000_000;

/// Limits of the Stackelberg check, attached to every certificate.
pub const STACKELBERG_SCOPE: &str = "dominance is checked only against pairs built from pure \
high-level policies with greedy-realizable low-level fixed points; members of the low-level \
reaction set that no greedy policy realizes are not covered";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionCertificate {
    /// `||Q^h - T^h_{Q^l} Q^h||`.
    pub residual_high: f64,
    /// `||Q^l - T^l_{Q^h} Q^l||`.
    pub residual_low: f64,
    pub tolerance: f64,
    pub in_high_set: bool,
    pub in_low_set: bool,
}

/// Bellman residuals of each table under the greedy policy of its partner.
pub fn reaction_membership(
    pair: &QTablePair,
    problem: &FeudalProblem,
    tol: f64,
) -> Result<ReactionCertificate> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    pair.check(problem)?;
    let high_model = HighLevelModel::compose(problem, &greedy_policy(&pair.low))?;
    let low_model = LowLevelModel::new(problem, greedy_policy(&pair.high))?;
    let residual_high = bellman_residual(&high_model, &pair.high);
    let residual_low = bellman_residual(&low_model, &pair.low);
    Ok(ReactionCertificate {
        residual_high,
        residual_low,
        tolerance: tol,
        in_high_set: residual_high < tol,
        in_low_set: residual_low < tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashCertificate {
    pub is_nash: bool,
    pub reaction: ReactionCertificate,
}

/// A pair is a Nash equilibrium when it lies in both reaction sets.
pub fn verify_nash(pair: &QTablePair, problem: &FeudalProblem, tol: f64) -> Result<NashCertificate> {
    let reaction = reaction_membership(pair, problem, tol)?;
    Ok(NashCertificate {
        is_nash: reaction.in_high_set && reaction.in_low_set,
        reaction,
    })
}

/// The entry where a candidate beats the certified pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergWitness {
    pub candidate: usize,
    pub state: usize,
    pub goal: usize,
    pub pair_value: f64,
    pub candidate_value: f64,
    pub candidate_pair: QTablePair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackelbergCertificate {
    pub is_stackelberg: bool,
    pub candidates_checked: usize,
    /// Smallest `pair_value - candidate_value` over all candidates and entries.
    pub min_margin: f64,
    pub witness: Option<StackelbergWitness>,
    pub scope: String,
}

/// The high level's value for a pair: policy evaluation of `greedy(Q^h)`
/// in the high-level MDP composed with `greedy(Q^l)`.
pub fn high_value(pair: &QTablePair, problem: &FeudalProblem, tol: f64) -> Result<Table> {
    let model = HighLevelModel::compose(problem, &greedy_policy(&pair.low))?;
    evaluate_high_policy(&model, &greedy_policy(&pair.high), tol)
}

/// One candidate per pure high-level policy: `Q^h` is the policy's one-hot
/// table and `Q^l` the low-level fixed point under it.
pub fn stackelberg_candidates(problem: &FeudalProblem, tol: f64) -> Result<Vec<QTablePair>> {
    let ns = problem.num_states();
    let ng = problem.num_goals();
    let count = (ng as u128).saturating_pow(ns as u32);
    if count > STACKELBERG_ENUMERATION_CAP {
        return Err(Error::InstanceTooLarge {
            terms: count,
            cap: STACKELBERG_ENUMERATION_CAP,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut choice = vec![0usize; ns];
    let init = Table::zeros(problem.num_low_states(), problem.num_actions());
    loop {
        let high = one_hot_policy(&choice, ng);
        let model = LowLevelModel::new(problem, high.clone())?;
        let low = solve_fixed_point(&model, &init, tol)?.table;
        out.push(QTablePair { high, low });
        // odometer over |Omega|^|S|
        let mut i = 0;
        loop {
            if i == ns {
                return Ok(out);
            }
            choice[i] += 1;
            if choice[i] < ng {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Checks that the pair's high-level value dominates every candidate's
/// entrywise, up to `-tol`. Candidates must lie in the low-level reaction set.
pub fn verify_stackelberg(
    pair: &QTablePair,
    problem: &FeudalProblem,
    candidates: &[QTablePair],
    tol: f64,
) -> Result<StackelbergCertificate> {
    let eval_tol = (tol * 1e-3).max(1e-13);
    let value = high_value(pair, problem, eval_tol)?;
    let mut min_margin = f64::INFINITY;
    let mut witness = None;
    for (k, cand) in candidates.iter().enumerate() {
        let membership = reaction_membership(cand, problem, tol)?;
        if !membership.in_low_set {
            return Err(Error::Contract(format!(
                "candidate {k} is not in the low-level reaction set (residual {:e})",
                membership.residual_low
            )));
        }
        let cand_value = high_value(cand, problem, eval_tol)?;
        for s in 0..value.rows() {
            for g in 0..value.cols() {
                let margin = value.get(s, g) - cand_value.get(s, g);
                if margin < min_margin {
                    min_margin = margin;
                    if margin < -tol {
                        witness = Some(StackelbergWitness {
                            candidate: k,
                            state: s,
                            goal: g,
                            pair_value: value.get(s, g),
                            candidate_value: cand_value.get(s, g),
                            candidate_pair: cand.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(StackelbergCertificate {
        is_stackelberg: witness.is_none(),
        candidates_checked: candidates.len(),
        min_margin,
        witness,
        scope: STACKELBERG_SCOPE.to_string(),
    })
}

/// Greedy policies of a pair, for reporting.
pub fn greedy_profile(pair: &QTablePair) -> (Vec<usize>, Vec<usize>) {
    (greedy_indices(&pair.high), greedy_indices(&pair.low))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{flip_feudal, flip_mdp};
    use crate::feudal::{FeudalOptions, LowRewardSpec};
    use crate::mdp::FlatMdp;
    use crate::oracle::solve_coupled;

    fn zero_problem() -> FeudalProblem {
        let flat = FlatMdp::new(flip_mdp(0.9).transition().clone(), Table::zeros(2, 2), 0.9).unwrap();
        FeudalProblem::new(
            flat,
            FeudalOptions {
                epoch_length: 2,
                low_reward: LowRewardSpec::Table(Table::zeros(8, 2)),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_pair_is_nash() {
        let p = zero_problem();
        let cert = verify_nash(&QTablePair::zeros(&p), &p, 1e-9).unwrap();
        assert!(cert.is_nash);
        assert_eq!(cert.reaction.residual_high, 0.0);
        assert_eq!(cert.reaction.residual_low, 0.0);
    }

    #[test]
    fn coupled_pair_is_nash_and_shift_breaks_it() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-12).unwrap();
        let cert = verify_nash(&sol.pair, &p, 1e-8).unwrap();
        assert!(cert.is_nash);
        let mut shifted = sol.pair.clone();
        shifted.high = shifted.high.map(|v| v + 1.0);
        let r = reaction_membership(&shifted, &p, 1e-8).unwrap();
        assert!((r.residual_high - (1.0 - 0.81)).abs() < 1e-9);
        assert!(!r.in_high_set && r.in_low_set);
        assert!(!verify_nash(&shifted, &p, 1e-8).unwrap().is_nash);
    }

    #[test]
    fn self_domination() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-12).unwrap();
        let cert = verify_stackelberg(&sol.pair, &p, std::slice::from_ref(&sol.pair), 1e-8).unwrap();
        assert!(cert.is_stackelberg);
        assert!(cert.scope.contains("pure"));
    }

    #[test]
    fn enumeration_size() {
        let p = flip_feudal();
        let c = stackelberg_candidates(&p, 1e-12).unwrap();
        assert_eq!(c.len(), 4);
        for cand in &c {
            assert!(reaction_membership(cand, &p, 1e-9).unwrap().in_low_set);
        }
    }

    #[test]
    fn better_candidate_is_witnessed() {
        let p = flip_feudal();
        let candidates = stackelberg_candidates(&p, 1e-12).unwrap();
        // goal 0 everywhere is worse than the best candidate somewhere
        let worst = &candidates[0];
        let cert = verify_stackelberg(worst, &p, &candidates, 1e-8).unwrap();
        assert!(!cert.is_stackelberg);
        let w = cert.witness.unwrap();
        assert!(w.candidate_value > w.pair_value);
    }

    #[test]
    fn non_member_candidate_rejected() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-12).unwrap();
        let mut bad = sol.pair.clone();
        bad.low = bad.low.map(|v| v + 1.0);
        assert!(matches!(
            verify_stackelberg(&sol.pair, &p, &[bad], 1e-8),
            Err(Error::Contract(_))
        ));
    }
}
