use serde::{Deserialize, Serialize};

use crate::feudal::{FeudalOptions, FeudalProblem, LowRewardSpec, DEFAULT_ENUMERATION_CAP};
use crate::mdp::FlatMdp;
use crate::rng::RngStream;
use crate::table::{Kernel, Table};

/// Seeded random MDP.
///
/// Each transition entry is zero with probability `sparsity`, otherwise an
/// exponential weight; rows are then normalized. A row that came out empty
/// gets a single random successor. Rewards are uniform in
/// `[-reward_scale, reward_scale]`.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    reward_scale: f64,
    sparsity: f64,
    seed: u64,
) -> FlatMdp {
    random_mdp_with_discount(num_states, num_actions, reward_scale, sparsity, 0.9, seed)
}

pub fn random_mdp_with_discount(
    num_states: usize,
    num_actions: usize,
    reward_scale: f64,
    sparsity: f64,
    discount: f64,
    seed: u64,
) -> FlatMdp {
    let mut rng = RngStream::new(seed);
    let mut transition = Kernel::zeros(num_states, num_actions, num_states);
    for s in 0..num_states {
        for a in 0..num_actions {
            let row = transition.row_mut(s, a);
            for p in row.iter_mut() {
                if rng.uniform() >= sparsity {
                    *p = -(1.0 - rng.uniform()).ln();
                }
            }
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            } else {
                let n = rng.index(num_states);
                row[n] = 1.0;
            }
        }
    }
    let reward = Table::from_fn(num_states, num_actions, |_, _| {
        rng.uniform_in(-reward_scale, reward_scale)
    });
    FlatMdp::unchecked(transition, reward, discount)
        .renormalized()
        .expect("generator produces stochastic rows")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomLowReward {
    Indicator,
    /// Uniform in `[-scale, scale]` over `S^l x A`.
    Table { scale: f64 },
}

/// Parameters of a random feudal instance. `Omega` is the first `num_goals`
/// states, capped at `num_states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomFeudalSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_goals: usize,
    pub epoch_length: usize,
    pub gamma_high: f64,
    pub gamma_low: f64,
    pub reward_scale: f64,
    pub sparsity: f64,
    pub low_reward: RandomLowReward,
}

impl Default for RandomFeudalSpec {
    fn default() -> Self {
        Self {
            num_states: 4,
            num_actions: 2,
            num_goals: 4,
            epoch_length: 2,
            gamma_high: 0.9,
            gamma_low: 0.9,
            reward_scale: 1.0,
            sparsity: 0.0,
            low_reward: RandomLowReward::Table { scale: 1.0 },
        }
    }
}

pub fn random_feudal(spec: &RandomFeudalSpec, seed: u64) -> FeudalProblem {
    let flat = random_mdp_with_discount(
        spec.num_states,
        spec.num_actions,
        spec.reward_scale,
        spec.sparsity,
        spec.gamma_high,
        seed,
    );
    let num_goals = spec.num_goals.min(spec.num_states);
    let num_low = spec.num_states * num_goals * spec.epoch_length;
    let low_reward = match spec.low_reward {
        RandomLowReward::Indicator => LowRewardSpec::Indicator,
        RandomLowReward::Table { scale } => {
            let mut rng = RngStream::substream(seed, 1);
            LowRewardSpec::Table(Table::from_fn(num_low, spec.num_actions, |_, _| {
                rng.uniform_in(-scale, scale)
            }))
        }
    };
    FeudalProblem::new(
        flat,
        FeudalOptions {
            goals: Some((0..num_goals).collect()),
            epoch_length: spec.epoch_length,
            gamma_high: Some(spec.gamma_high),
            gamma_low: spec.gamma_low,
            low_reward,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        },
    )
    .expect("random feudal spec yields a valid problem")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_flat_mdp;

    #[test]
    fn one_by_one() {
        let m = random_mdp(1, 1, 1.0, 0.5, 3);
        assert_eq!(m.prob(0, 0, 0), 1.0);
        assert!(validate_flat_mdp(&m).is_valid());
    }

    #[test]
    fn outputs_validate() {
        for seed in 0..50 {
            for sparsity in [0.0, 0.5, 0.95] {
                let m = random_mdp(5, 3, 2.0, sparsity, seed);
                assert!(validate_flat_mdp(&m).is_valid(), "seed {seed}");
                assert!(m.reward_bound() <= 2.0);
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = serde_json::to_string(&random_mdp(4, 2, 1.0, 0.3, 11)).unwrap();
        let b = serde_json::to_string(&random_mdp(4, 2, 1.0, 0.3, 11)).unwrap();
        assert_eq!(a, b);
        let f1 = serde_json::to_string(&random_feudal(&RandomFeudalSpec::default(), 5)).unwrap();
        let f2 = serde_json::to_string(&random_feudal(&RandomFeudalSpec::default(), 5)).unwrap();
        assert_eq!(f1, f2);
    }
}
