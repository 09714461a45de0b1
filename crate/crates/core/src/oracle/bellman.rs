use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feudal::{compose_high_model, FeudalProblem};
use crate::policy::check_stochastic;
use crate::table::{Kernel, Table};

/// Default iteration cap for [`solve_fixed_point`].
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

/// A max-norm contraction on Q-tables of a fixed shape.
pub trait BellmanOperator {
    fn apply(&self, q: &Table) -> Table;

    /// Contraction modulus in the max norm.
    fn modulus(&self) -> f64;

    fn shape(&self) -> (usize, usize);
}

/// The composed high-level MDP for a fixed low-level policy:
/// `P^h`, `r^h` and the per-epoch discount `(gamma^h)^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLevelModel {
    pub kernel: Kernel,
    pub reward: Table,
    pub discount: f64,
}

impl HighLevelModel {
    pub fn compose(problem: &FeudalProblem, low_policy: &Table) -> Result<Self> {
        let (kernel, reward) = compose_high_model(problem, low_policy)?;
        Ok(Self {
            kernel,
            reward,
            discount: problem.high_discount(),
        })
    }

    /// `E[max_w' Q(s', w') | s, w]` under `P^h`.
    pub fn expected_next_max(&self, q: &Table, state: usize, goal: usize) -> f64 {
        self.kernel
            .row(state, goal)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0.0)
            .map(|(n, &p)| p * q.row_max(n))
            .sum()
    }
}

impl BellmanOperator for HighLevelModel {
    fn apply(&self, q: &Table) -> Table {
        high_bellman_apply(q, self)
    }

    fn modulus(&self) -> f64 {
        self.discount
    }

    fn shape(&self) -> (usize, usize) {
        self.reward.shape()
    }
}

/// `(T^h Q)(s, w) = r^h(s, w) + (gamma^h)^T sum_s' P^h(s' | s, w) max_w' Q(s', w')`.
pub fn high_bellman_apply(q: &Table, model: &HighLevelModel) -> Table {
    let maxes: Vec<f64> = (0..q.rows()).map(|s| q.row_max(s)).collect();
    Table::from_fn(model.reward.rows(), model.reward.cols(), |s, g| {
        let cont: f64 = model
            .kernel
            .row(s, g)
            .iter()
            .zip(&maxes)
            .map(|(&p, &m)| if p == 0.0 { 0.0 } else { p * m })
            .sum();
        model.reward.get(s, g) + model.discount * cont
    })
}

/// The low-level MDP for a fixed high-level policy.
///
/// Expectations use the factored form of the low-level kernel: off-boundary
/// the successor is `(s', w, c + 1)`, at the boundary the goal is averaged
/// under `pi^h(. | s')`. This never materializes the dense
/// `|S^l| x |A| x |S^l|` kernel.
#[derive(Debug, Clone)]
pub struct LowLevelModel<'a> {
    problem: &'a FeudalProblem,
    high_policy: Table,
}

impl<'a> LowLevelModel<'a> {
    pub fn new(problem: &'a FeudalProblem, high_policy: Table) -> Result<Self> {
        check_stochastic(
            &high_policy,
            problem.num_states(),
            problem.num_goals(),
            "high-level policy",
        )?;
        Ok(Self {
            problem,
            high_policy,
        })
    }

    pub fn problem(&self) -> &FeudalProblem {
        self.problem
    }

    pub fn high_policy(&self) -> &Table {
        &self.high_policy
    }

    /// `V(s', w', c') = max_a Q(s^l', a)` folded into what each low state needs:
    /// per-low-state maxima and the boundary average per flat state.
    fn continuation(&self, q: &Table) -> (Vec<f64>, Vec<f64>) {
        let space = self.problem.low_space();
        let maxes: Vec<f64> = (0..space.len()).map(|i| q.row_max(i)).collect();
        let boundary: Vec<f64> = (0..self.problem.num_states())
            .map(|s| {
                self.high_policy
                    .row(s)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(g, &p)| p * maxes[space.index_of(s, g, 0)])
                    .sum()
            })
            .collect();
        (maxes, boundary)
    }

    fn expected_with(&self, maxes: &[f64], boundary: &[f64], low_state: usize, action: usize) -> f64 {
        let space = self.problem.low_space();
        let ls = space.state(low_state);
        let row = self.problem.flat().row(ls.base, action);
        if ls.clock + 1 < self.problem.epoch_length() {
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(n, &p)| p * maxes[space.index_of(n, ls.goal, ls.clock + 1)])
                .sum()
        } else {
            row.iter()
                .zip(boundary)
                .map(|(&p, &b)| if p == 0.0 { 0.0 } else { p * b })
                .sum()
        }
    }

    /// `E[max_a' Q(s^l', a') | s^l, a]`.
    pub fn expected_next_max(&self, q: &Table, low_state: usize, action: usize) -> f64 {
        let (maxes, boundary) = self.continuation(q);
        self.expected_with(&maxes, &boundary, low_state, action)
    }

    /// All `E[max Q(next)]` values in one pass.
    pub fn expected_next_max_table(&self, q: &Table) -> Table {
        let (maxes, boundary) = self.continuation(q);
        Table::from_fn(q.rows(), q.cols(), |i, a| self.expected_with(&maxes, &boundary, i, a))
    }
}

impl BellmanOperator for LowLevelModel<'_> {
    fn apply(&self, q: &Table) -> Table {
        let gamma = self.problem.gamma_low();
        let cont = self.expected_next_max_table(q);
        Table::from_fn(q.rows(), q.cols(), |i, a| {
            self.problem.low_reward(i, a) + gamma * cont.get(i, a)
        })
    }

    fn modulus(&self) -> f64 {
        self.problem.gamma_low()
    }

    fn shape(&self) -> (usize, usize) {
        (self.problem.num_low_states(), self.problem.num_actions())
    }
}

/// `(T^l Q)(s^l, a) = r^l(s^l, a) + gamma^l sum P^l(s^l' | s^l, a) max_a' Q(s^l', a')`.
pub fn low_bellman_apply(q: &Table, model: &LowLevelModel<'_>) -> Table {
    model.apply(q)
}

/// Dense-kernel version of [`low_bellman_apply`], for cross-checking.
pub fn low_bellman_apply_dense(problem: &FeudalProblem, kernel: &Kernel, q: &Table) -> Table {
    let maxes: Vec<f64> = (0..q.rows()).map(|i| q.row_max(i)).collect();
    Table::from_fn(q.rows(), q.cols(), |i, a| {
        let cont: f64 = kernel
            .row(i, a)
            .iter()
            .zip(&maxes)
            .map(|(&p, &m)| if p == 0.0 { 0.0 } else { p * m })
            .sum();
        problem.low_reward(i, a) + problem.gamma_low() * cont
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub table: Table,
    pub iterations: usize,
    /// `||Q - T Q||` at the returned table.
    pub residual: f64,
}

/// Iterates `Q <- T Q` until `||dQ|| < tol (1 - g) / g`, which guarantees
/// `||Q - T Q|| < tol` at the returned table.
pub fn solve_fixed_point(
    operator: &dyn BellmanOperator,
    init: &Table,
    tol: f64,
) -> Result<FixedPoint> {
    solve_fixed_point_capped(operator, init, tol, DEFAULT_MAX_ITERATIONS)
}

pub fn solve_fixed_point_capped(
    operator: &dyn BellmanOperator,
    init: &Table,
    tol: f64,
    max_iterations: usize,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let (rows, cols) = operator.shape();
    init.expect_shape(rows, cols, "fixed-point initial table")?;
    let g = operator.modulus();
    let threshold = tol * (1.0 - g) / g;
    let mut q = init.clone();
    let mut last_step = f64::INFINITY;
    for it in 1..=max_iterations {
        let next = operator.apply(&q);
        last_step = next.sup_distance(&q);
        q = next;
        if last_step < threshold {
            // ||T q - q|| <= g * last_step < tol
            let residual = operator.apply(&q).sup_distance(&q);
            return Ok(FixedPoint {
                table: q,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        last_step,
    })
}

/// Bellman residual `||Q - T Q||`.
pub fn bellman_residual(operator: &dyn BellmanOperator, q: &Table) -> f64 {
    operator.apply(q).sup_distance(q)
}

/// Value of a fixed (possibly stochastic) goal policy in the high-level MDP:
/// the fixed point of `Q = r^h + g^T P^h sum_w' pi(w' | s') Q(s', w')`.
pub fn evaluate_high_policy(model: &HighLevelModel, policy: &Table, tol: f64) -> Result<Table> {
    let (rows, cols) = model.reward.shape();
    check_stochastic(policy, rows, cols, "high-level policy")?;
    struct Evaluation<'m> {
        model: &'m HighLevelModel,
        policy: &'m Table,
    }
    impl BellmanOperator for Evaluation<'_> {
        fn apply(&self, q: &Table) -> Table {
            let values: Vec<f64> = (0..q.rows())
                .map(|s| q.row(s).iter().zip(self.policy.row(s)).map(|(v, p)| v * p).sum())
                .collect();
            Table::from_fn(q.rows(), q.cols(), |s, g| {
                let cont: f64 = self
                    .model
                    .kernel
                    .row(s, g)
                    .iter()
                    .zip(&values)
                    .map(|(&p, &v)| if p == 0.0 { 0.0 } else { p * v })
                    .sum();
                self.model.reward.get(s, g) + self.model.discount * cont
            })
        }
        fn modulus(&self) -> f64 {
            self.model.discount
        }
        fn shape(&self) -> (usize, usize) {
            self.model.reward.shape()
        }
    }
    let op = Evaluation { model, policy };
    Ok(solve_fixed_point(&op, &Table::zeros(rows, cols), tol)?.table)
}

/// Optimal Q-function of a flat MDP by value iteration.
pub fn flat_value_iteration(mdp: &crate::mdp::FlatMdp, tol: f64) -> Result<Table> {
    struct Flat<'m>(&'m crate::mdp::FlatMdp);
    impl BellmanOperator for Flat<'_> {
        fn apply(&self, q: &Table) -> Table {
            let m = self.0;
            let maxes: Vec<f64> = (0..q.rows()).map(|s| q.row_max(s)).collect();
            Table::from_fn(q.rows(), q.cols(), |s, a| {
                let cont: f64 = m.row(s, a).iter().zip(&maxes).map(|(p, v)| p * v).sum();
                m.reward(s, a) + m.discount() * cont
            })
        }
        fn modulus(&self) -> f64 {
            self.0.discount()
        }
        fn shape(&self) -> (usize, usize) {
            (self.0.num_states(), self.0.num_actions())
        }
    }
    let init = Table::zeros(mdp.num_states(), mdp.num_actions());
    Ok(solve_fixed_point(&Flat(mdp), &init, tol)?.table)
}
