//! Exact and semi-exact reference computations for the coupled system.

mod bellman;
mod coupled;
mod ode;
mod probes;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bellman::{
    bellman_residual, evaluate_high_policy, flat_value_iteration, high_bellman_apply,
    low_bellman_apply, low_bellman_apply_dense, solve_fixed_point, solve_fixed_point_capped,
    BellmanOperator, FixedPoint, HighLevelModel, LowLevelModel, DEFAULT_MAX_ITERATIONS,
};
pub use coupled::{solve_coupled, CoupledSolution};
pub use ode::{
    integrate_fast_ode, integrate_mean_field_odes, MeanFieldContext, OdeConfig, OdeTrajectory,
    PolicySource,
};
pub use probes::{
    contraction_ratio, estimate_lipschitz, evaluate_field, fit_second_moment_constant,
    lambda_lipschitz_probe, martingale_mean_estimate, random_pair, random_table,
    random_table_pairs, scaled_field_gap, squared_two_norm, ContractionEstimate, Field, Level,
    LipschitzEstimate, MartingaleEstimate, ScaledFieldGap, SecondMomentFit,
};

use crate::error::{Error, Result};

/// Everything an oracle run produced, for JSON export.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupled: Option<CoupledSolution>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub contraction: Vec<ContractionEstimate>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub martingale: Vec<MartingaleEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_moment: Option<SecondMomentFit>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub scaled_fields: Vec<ScaledFieldGap>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lipschitz: Vec<(Field, LipschitzEstimate)>,
}

impl OracleReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{flip_feudal, flip_mdp, random_feudal, RandomFeudalSpec};
    use crate::feudal::{compose_low_dynamics, FeudalOptions, FeudalProblem, LowRewardSpec};
    use crate::mdp::FlatMdp;
    use crate::policy::{greedy_policy, one_hot_policy, uniform_policy};
    use crate::rng::RngStream;
    use crate::table::{Kernel, Table};

    fn one_state_problem(r: f64) -> FeudalProblem {
        let flat = FlatMdp::new(Kernel::from_fn(1, 1, 1, |_, _, _| 1.0), Table::filled(1, 1, r), 0.9)
            .unwrap();
        FeudalProblem::new(
            flat,
            FeudalOptions {
                low_reward: LowRewardSpec::Table(Table::filled(1, 1, r)),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn low_operator_zero_continuation() {
        let p = random_feudal(&RandomFeudalSpec::default(), 4);
        let model = LowLevelModel::new(&p, uniform_policy(4, 4)).unwrap();
        let out = low_bellman_apply(&Table::zeros(p.num_low_states(), 2), &model);
        assert_eq!(&out, p.low_reward_table());
    }

    #[test]
    fn low_operator_one_state_fixed_point() {
        let p = one_state_problem(1.0);
        let model = LowLevelModel::new(&p, Table::filled(1, 1, 1.0)).unwrap();
        let out = low_bellman_apply(&Table::filled(1, 1, 10.0), &model);
        assert!((out.get(0, 0) - 10.0).abs() < 1e-12);
        let fp = solve_fixed_point(&model, &Table::zeros(1, 1), 1e-10).unwrap();
        assert!((fp.table.get(0, 0) - 10.0).abs() < 1e-9);
        assert!(fp.residual < 1e-10);
    }

    #[test]
    fn factored_low_operator_matches_dense_kernel() {
        let spec = RandomFeudalSpec { epoch_length: 3, num_goals: 3, ..Default::default() };
        let mut rng = RngStream::new(8);
        for seed in 0..5 {
            let p = random_feudal(&spec, seed);
            let pi = crate::policy::boltzmann_policy(&random_table(4, 3, 1.0, &mut rng), 0.5).unwrap();
            let dense = compose_low_dynamics(&p, &pi).unwrap();
            let model = LowLevelModel::new(&p, pi).unwrap();
            let q = random_table(p.num_low_states(), 2, 3.0, &mut rng);
            let a = low_bellman_apply(&q, &model);
            let b = low_bellman_apply_dense(&p, &dense, &q);
            assert!(a.sup_distance(&b) < 1e-12);
        }
    }

    #[test]
    fn high_operator_zero_table_gives_reward() {
        let p = flip_feudal();
        let model = HighLevelModel::compose(&p, &uniform_policy(p.num_low_states(), 2)).unwrap();
        let out = high_bellman_apply(&Table::zeros(2, 2), &model);
        assert_eq!(out, model.reward);
    }

    #[test]
    fn zero_reward_fixed_points_are_zero() {
        let flat = FlatMdp::new(flip_mdp(0.9).transition().clone(), Table::zeros(2, 2), 0.9).unwrap();
        let p = FeudalProblem::new(
            flat,
            FeudalOptions {
                epoch_length: 2,
                low_reward: LowRewardSpec::Table(Table::zeros(8, 2)),
                ..Default::default()
            },
        )
        .unwrap();
        let model = HighLevelModel::compose(&p, &uniform_policy(8, 2)).unwrap();
        let fp = solve_fixed_point(&model, &Table::filled(2, 2, 3.0), 1e-10).unwrap();
        assert!(fp.table.max_abs() < 1e-9);
        let sol = solve_coupled(&p, 1e-10).unwrap();
        assert!(sol.pair.high.max_abs() < 1e-9 && sol.pair.low.max_abs() < 1e-9);
    }

    #[test]
    fn contraction_on_random_pairs() {
        let p = random_feudal(&RandomFeudalSpec::default(), 1);
        let mut rng = RngStream::new(2);
        let low = LowLevelModel::new(&p, uniform_policy(4, 4)).unwrap();
        let pairs = random_table_pairs(p.num_low_states(), 2, 200, 5.0, &mut rng);
        let est = contraction_ratio(&low, &pairs);
        assert!(est.holds(1e-10), "{est:?}");
        let high = HighLevelModel::compose(&p, &uniform_policy(p.num_low_states(), 2)).unwrap();
        let pairs = random_table_pairs(4, 4, 200, 5.0, &mut rng);
        let est = contraction_ratio(&high, &pairs);
        assert!((est.modulus - 0.81).abs() < 1e-12);
        assert!(est.holds(1e-10), "{est:?}");
    }

    #[test]
    fn fixed_point_bound_and_init_invariance() {
        let p = random_feudal(&RandomFeudalSpec::default(), 6);
        let model = LowLevelModel::new(&p, uniform_policy(4, 4)).unwrap();
        let tol = 1e-8;
        let mut rng = RngStream::new(0);
        let reference = solve_fixed_point(&model, &Table::zeros(p.num_low_states(), 2), tol).unwrap();
        assert!(reference.table.max_abs() <= p.low_reward_bound() / (1.0 - p.gamma_low()));
        for _ in 0..10 {
            let init = random_table(p.num_low_states(), 2, 20.0, &mut rng);
            let fp = solve_fixed_point(&model, &init, tol).unwrap();
            assert!(fp.table.sup_distance(&reference.table) < 2.0 * tol);
        }
    }

    #[test]
    fn fixed_point_iteration_cap() {
        let p = one_state_problem(1.0);
        let model = LowLevelModel::new(&p, Table::filled(1, 1, 1.0)).unwrap();
        assert!(matches!(
            solve_fixed_point_capped(&model, &Table::zeros(1, 1), 1e-12, 3),
            Err(Error::NonConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn coupled_flip_residuals() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-10).unwrap();
        assert!(sol.residual_high < 1e-8 && sol.residual_low < 1e-8, "{sol:?}");
    }

    #[test]
    fn t1_single_goal_matches_flat_optimum() {
        let flat = crate::envs::random_mdp(5, 3, 1.0, 0.3, 12);
        let p = FeudalProblem::new(
            flat.clone(),
            FeudalOptions { goals: Some(vec![0]), epoch_length: 1, ..Default::default() },
        )
        .unwrap();
        // with one goal, the high value under the optimal low policy is the flat optimum
        let flat_q = flat_value_iteration(&flat, 1e-12).unwrap();
        let flat_policy = greedy_policy(&flat_q);
        let low_policy = Table::from_fn(p.num_low_states(), 3, |i, a| flat_policy.get(i, a));
        let model = HighLevelModel::compose(&p, &low_policy).unwrap();
        let q_h = solve_fixed_point(&model, &Table::zeros(5, 1), 1e-12).unwrap().table;
        for s in 0..5 {
            assert!((q_h.get(s, 0) - flat_q.row_max(s)).abs() < 1e-8);
        }
    }

    #[test]
    fn policy_evaluation_of_greedy_equals_optimum() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-12).unwrap();
        let low = one_hot_policy(&sol.low_policy, 2);
        let model = HighLevelModel::compose(&p, &low).unwrap();
        let value = evaluate_high_policy(&model, &one_hot_policy(&sol.high_policy, 2), 1e-12).unwrap();
        assert!(value.sup_distance(&sol.pair.high) < 1e-9);
    }

    #[test]
    fn mean_fields_vanish_at_coupled_solution() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-12).unwrap();
        let ctx = MeanFieldContext::greedy(&p);
        assert!(ctx.h(&sol.pair.low, &sol.pair.high).unwrap().max_abs() < 1e-10);
        assert!(ctx.g(&sol.pair.low, &sol.pair.high).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn fast_ode_reaches_fixed_point() {
        let p = flip_feudal();
        let ctx = MeanFieldContext::greedy(&p);
        let mut rng = RngStream::new(4);
        let y = random_table(2, 2, 3.0, &mut rng);
        let x0 = random_table(p.num_low_states(), 2, 3.0, &mut rng);
        let ode = OdeConfig { step: 0.01, horizon: 20.0 / (1.0 - 0.9), epsilon: 1.0, samples: 3 };
        let traj = integrate_fast_ode(&ctx, &x0, &y, &ode).unwrap();
        let target = ctx.lambda(&y, 1e-12).unwrap();
        assert!(traj.terminal().low.sup_distance(&target) < 1e-4);
        assert!(traj.terminal().low.sup_distance(&target) < 10.0 * ode.step);
    }

    #[test]
    fn ode_stationary_at_equilibrium() {
        let p = flip_feudal();
        let sol = solve_coupled(&p, 1e-12).unwrap();
        let ctx = MeanFieldContext::greedy(&p);
        let ode = OdeConfig { horizon: 5.0, ..Default::default() };
        let traj = integrate_mean_field_odes(&ctx, &sol.pair.low, &sol.pair.high, &ode).unwrap();
        assert!(traj.terminal().sup_distance(&sol.pair) < 1e-8);
        assert!(ctx.cached_models() >= 1);
    }

    #[test]
    fn ode_divergence_reported() {
        let p = flip_feudal();
        let ctx = MeanFieldContext::greedy(&p);
        // epsilon far below step overshoots the fast contraction
        let ode = OdeConfig { step: 0.1, horizon: 100.0, epsilon: 0.01, samples: 2 };
        let x0 = Table::filled(p.num_low_states(), 2, 1.0);
        let err = integrate_mean_field_odes(&ctx, &x0, &Table::zeros(2, 2), &ode).unwrap_err();
        assert!(matches!(err, Error::Instability { .. }));
    }

    #[test]
    fn martingale_deterministic_is_exact_zero() {
        let p = flip_feudal();
        let ctx = MeanFieldContext::greedy(&p);
        let mut rng = RngStream::new(1);
        let pair = random_pair(&p, 2.0, &mut rng);
        for level in [Level::High, Level::Low] {
            let est = martingale_mean_estimate(&ctx, &pair, level, (1, 1), 500, &mut rng).unwrap();
            assert_eq!(est.mean, 0.0);
            assert_eq!(est.stderr, 0.0);
            assert!(est.is_zero_mean(4.0));
        }
        assert!(martingale_mean_estimate(&ctx, &pair, Level::Low, (0, 0), 99, &mut rng).is_err());
    }

    #[test]
    fn scaled_field_zero_reward_greedy_is_exact() {
        let flat = FlatMdp::new(flip_mdp(0.9).transition().clone(), Table::zeros(2, 2), 0.9).unwrap();
        let p = FeudalProblem::new(
            flat,
            FeudalOptions {
                epoch_length: 2,
                low_reward: LowRewardSpec::Table(Table::zeros(8, 2)),
                ..Default::default()
            },
        )
        .unwrap();
        let ctx = MeanFieldContext::greedy(&p);
        let mut rng = RngStream::new(3);
        let grid: Vec<_> = (0..5).map(|_| random_pair(&p, 1.0, &mut rng)).collect();
        for c in [1.0, 10.0, 100.0] {
            for field in [Field::H, Field::G] {
                let gap = scaled_field_gap(&ctx, field, c, &grid).unwrap();
                assert!(gap.gap < 1e-12, "{gap:?}");
            }
        }
    }

    #[test]
    fn lipschitz_cases() {
        let p = flip_feudal();
        let mut rng = RngStream::new(5);
        let fixed_high = uniform_policy(2, 2);
        let ctx = MeanFieldContext::new(
            &p,
            PolicySource::Fixed(fixed_high),
            PolicySource::Extract(crate::policy::PolicyExtractor::Greedy),
        )
        .unwrap();
        let pairs: Vec<_> = (0..200)
            .map(|_| (random_pair(&p, 3.0, &mut rng), random_pair(&p, 3.0, &mut rng)))
            .collect();
        let est = estimate_lipschitz(Field::H, &ctx, &pairs).unwrap();
        assert!(est.max_ratio <= 1.0 + 0.9 + 1e-12);
        assert!(est.max_ratio.is_finite());

        let base = random_pair(&p, 3.0, &mut rng);
        let mut shifted = base.clone();
        shifted.high = base.high.map(|v| v + 0.5);
        let greedy = MeanFieldContext::greedy(&p);
        let est = estimate_lipschitz(Field::G, &greedy, &[(base.clone(), shifted), (base.clone(), base)]).unwrap();
        assert!(est.max_ratio >= 1.0 - 0.81 - 1e-12);
        assert_eq!(est.skipped, 1);
    }
}
