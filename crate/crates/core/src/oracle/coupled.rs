use serde::{Deserialize, Serialize};

use super::bellman::{bellman_residual, solve_fixed_point, HighLevelModel, LowLevelModel};
use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::policy::{greedy_indices, one_hot_policy};
use crate::qlearning::QTablePair;

/// Sweep cap for the best-response iteration. Pure policy pairs are finite,
/// so a cycle shows up long before this on any instance that fits in memory.
const MAX_SWEEPS: usize = 10_000;

/// Solution of the coupled Bellman system and its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledSolution {
    pub pair: QTablePair,
    /// Greedy goal per state.
    pub high_policy: Vec<usize>,
    /// Greedy action per low-level state.
    pub low_policy: Vec<usize>,
    pub sweeps: usize,
    /// `||Q^h - T^h Q^h||` under the greedy low-level policy of `Q^l`.
    pub residual_high: f64,
    /// `||Q^l - T^l Q^l||` under the greedy high-level policy of `Q^h`.
    pub residual_low: f64,
}

/// Alternating best response on the coupled system.
///
/// Each sweep fixes the low-level greedy policy, solves the high level,
/// fixes the resulting high-level greedy policy and solves the low level.
/// Stops when a sweep leaves both greedy policies unchanged; a repeated
/// policy pair without convergence is reported as [`Error::PolicyCycle`].
pub fn solve_coupled(problem: &FeudalProblem, tol: f64) -> Result<CoupledSolution> {
    let na = problem.num_actions();
    let ng = problem.num_goals();
    let mut pair = QTablePair::zeros(problem);
    let mut history: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut low_policy = greedy_indices(&pair.low);

    for sweep in 1..=MAX_SWEEPS {
        let high_model = HighLevelModel::compose(problem, &one_hot_policy(&low_policy, na))?;
        pair.high = solve_fixed_point(&high_model, &pair.high, tol)?.table;
        let high_policy = greedy_indices(&pair.high);
        let low_model = LowLevelModel::new(problem, one_hot_policy(&high_policy, ng))?;
        pair.low = solve_fixed_point(&low_model, &pair.low, tol)?.table;
        let next_low = greedy_indices(&pair.low);

        if next_low == low_policy {
            let residual_high = bellman_residual(&high_model, &pair.high);
            let residual_low = bellman_residual(&low_model, &pair.low);
            return Ok(CoupledSolution {
                pair,
                high_policy,
                low_policy,
                sweeps: sweep,
                residual_high,
                residual_low,
            });
        }
        let key = (high_policy, low_policy);
        if let Some(first) = history.iter().position(|h| *h == key) {
            let mut cycle = history.split_off(first);
            cycle.push(key);
            return Err(Error::PolicyCycle { sweeps: sweep, cycle });
        }
        history.push(key);
        low_policy = next_low;
    }
    Err(Error::NonConvergence {
        iterations: MAX_SWEEPS,
        last_step: f64::NAN,
    })
}
