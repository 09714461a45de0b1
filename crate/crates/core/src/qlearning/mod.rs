//! The coupled two-timescale Q-learning updates and the training loops.

mod schedule;
mod train;

pub use schedule::{step_sizes, StepCounting, StepSizeSchedule, TemperatureClock};
pub use train::{
    train_feudal, train_feudal_from, train_flat_watkins, train_flat_watkins_from, BoundReport,
    BoundViolation, EpisodeLog, FlatOutcome, StartState, TrainingConfig, TrainingOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::table::Table;

/// High-level table `Q^h` over `S x Omega` and low-level table `Q^l` over `S^l x A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTablePair {
    pub high: Table,
    pub low: Table,
}

impl QTablePair {
    pub fn filled(problem: &FeudalProblem, value: f64) -> Self {
        Self {
            high: Table::filled(problem.num_states(), problem.num_goals(), value),
            low: Table::filled(problem.num_low_states(), problem.num_actions(), value),
        }
    }

    pub fn zeros(problem: &FeudalProblem) -> Self {
        Self::filled(problem, 0.0)
    }

    /// Shape and finiteness against `problem`.
    pub fn check(&self, problem: &FeudalProblem) -> Result<()> {
        self.high
            .expect_shape(problem.num_states(), problem.num_goals(), "high-level Q-table")?;
        self.low
            .expect_shape(problem.num_low_states(), problem.num_actions(), "low-level Q-table")?;
        if !self.high.is_finite() || !self.low.is_finite() {
            return Err(Error::Domain("Q-tables contain non-finite entries".into()));
        }
        Ok(())
    }

    /// `max(||Q^h - other.Q^h||, ||Q^l - other.Q^l||)`.
    pub fn sup_distance(&self, other: &QTablePair) -> f64 {
        self.high.sup_distance(&other.high).max(self.low.sup_distance(&other.low))
    }
}

/// Low-level update of one entry:
/// `Q^l(s, a) += alpha * (r^l + gamma^l * max_a' Q^l(s', a') - Q^l(s, a))`.
///
/// `state` and `next_state` are low-level state indices.
pub fn low_q_update(
    low: &mut Table,
    state: usize,
    action: usize,
    low_reward: f64,
    next_state: usize,
    alpha: f64,
    gamma_low: f64,
) -> Result<()> {
    check_step(alpha, "alpha")?;
    crate::error::check_index("low state", state, low.rows())?;
    crate::error::check_index("low state", next_state, low.rows())?;
    crate::error::check_index("action", action, low.cols())?;
    low_update_unchecked(low, state, action, low_reward, next_state, alpha, gamma_low);
    Ok(())
}

#[inline]
pub(crate) fn low_update_unchecked(
    low: &mut Table,
    state: usize,
    action: usize,
    low_reward: f64,
    next_state: usize,
    alpha: f64,
    gamma_low: f64,
) {
    let target = low_reward + gamma_low * low.row_max(next_state);
    let q = low.get(state, action);
    low.set(state, action, q + alpha * (target - q));
}

/// High-level update of one entry, with the buffered extrinsic rewards of the epoch:
/// target `sum_k gamma^k window[k] + gamma^T max_w' Q^h(s', w')`.
#[allow(clippy::too_many_arguments)]
pub fn high_q_update(
    high: &mut Table,
    state: usize,
    goal: usize,
    reward_window: &[f64],
    next_state: usize,
    beta: f64,
    gamma_high: f64,
    epoch_length: usize,
) -> Result<()> {
    if reward_window.len() != epoch_length {
        return Err(Error::Contract(format!(
            "reward window has {} entries, epoch length is {epoch_length}",
            reward_window.len()
        )));
    }
    check_step(beta, "beta")?;
    crate::error::check_index("state", state, high.rows())?;
    crate::error::check_index("state", next_state, high.rows())?;
    crate::error::check_index("goal", goal, high.cols())?;
    high_update_unchecked(high, state, goal, reward_window, next_state, beta, gamma_high);
    Ok(())
}

#[inline]
pub(crate) fn high_update_unchecked(
    high: &mut Table,
    state: usize,
    goal: usize,
    reward_window: &[f64],
    next_state: usize,
    beta: f64,
    gamma_high: f64,
) {
    let mut ret = 0.0;
    let mut discount = 1.0;
    for &r in reward_window {
        ret += discount * r;
        discount *= gamma_high;
    }
    let target = ret + discount * high.row_max(next_state);
    let q = high.get(state, goal);
    high.set(state, goal, q + beta * (target - q));
}

fn check_step(step: f64, name: &str) -> Result<()> {
    if (0.0..=1.0).contains(&step) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {step} outside [0, 1]")))
    }
}

/// `r_bar^l / (1 - gamma^l) + ||Q^l_0||`.
pub fn low_table_bound(problem: &FeudalProblem, initial_norm: f64) -> f64 {
    problem.low_reward_bound() / (1.0 - problem.gamma_low()) + initial_norm
}

/// `T r_bar (1 - g^T) / ((1 - g)(1 - g^T)) + ||Q^h_0||` with `g = gamma^h`.
pub fn high_table_bound(problem: &FeudalProblem, initial_norm: f64) -> f64 {
    let g = problem.gamma_high();
    let gt = problem.high_discount();
    let t = problem.epoch_length() as f64;
    t * problem.flat().reward_bound() * (1.0 - gt) / ((1.0 - g) * (1.0 - gt)) + initial_norm
}
