//! The two fictitious MDPs built on top of a flat MDP.
//!
//! The high level sees `S^h = S` and picks goals from `Omega` every `T` steps;
//! the low level sees `S^l = S x Omega x {0..T-1}` and acts every step. Their
//! dynamics depend on the other level's policy, which is why the compositors
//! here take a policy table as input.
//!
//! At an epoch boundary the new goal is drawn by the high-level policy at the
//! state the system lands in, `pi^h(. | s_{k+1})`. That is the state where the
//! learning loop actually queries the high level, so the composed kernel and
//! the sampled process describe the same chain.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::mdp::{FlatMdp, FlatMdpDocument};
use crate::policy::check_stochastic;
use crate::rng::RngStream;
use crate::table::{Kernel, Table};

/// Default cap on `|S|^(T-1) * |A|^T` for the exact compositors.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// `s^de_{k+1}` from `s^de_k`: increments and wraps to 0 after `T - 1`.
pub fn next_decision_state(s_de: usize, period: usize) -> Result<usize> {
    if period == 0 {
        return Err(Error::Domain("epoch length must be at least 1".into()));
    }
    check_index("decision clock", s_de, period)?;
    Ok(if s_de + 1 == period { 0 } else { s_de + 1 })
}

/// Within-epoch clock `s^de`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionEpochClock {
    value: usize,
    period: usize,
}

impl DecisionEpochClock {
    pub fn new(period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::Domain("epoch length must be at least 1".into()));
        }
        Ok(Self { value: 0, period })
    }

    pub fn value(self) -> usize {
        self.value
    }

    pub fn period(self) -> usize {
        self.period
    }

    /// True on the last step of an epoch, where the goal is about to be resampled.
    pub fn at_boundary(self) -> bool {
        self.value + 1 == self.period
    }

    pub fn advance(&mut self) {
        self.value = if self.at_boundary() { 0 } else { self.value + 1 };
    }

    pub fn reset(&mut self) {
        self.value = 0;
    }
}

/// Low-level state `(s, omega, s^de)`; `goal` is an index into the goal space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LowState {
    pub base: usize,
    pub goal: usize,
    pub clock: usize,
}

/// Dense indexing of `S x Omega x {0..T-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LowStateSpace {
    num_states: usize,
    num_goals: usize,
    epoch_length: usize,
}

impl LowStateSpace {
    pub fn new(num_states: usize, num_goals: usize, epoch_length: usize) -> Self {
        Self {
            num_states,
            num_goals,
            epoch_length,
        }
    }

    pub fn len(&self) -> usize {
        self.num_states * self.num_goals * self.epoch_length
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, s: LowState) -> usize {
        (s.base * self.num_goals + s.goal) * self.epoch_length + s.clock
    }

    #[inline]
    pub fn index_of(&self, base: usize, goal: usize, clock: usize) -> usize {
        (base * self.num_goals + goal) * self.epoch_length + clock
    }

    pub fn state(&self, index: usize) -> LowState {
        let clock = index % self.epoch_length;
        let rest = index / self.epoch_length;
        LowState {
            base: rest / self.num_goals,
            goal: rest % self.num_goals,
            clock,
        }
    }

    pub fn checked_index(&self, s: LowState) -> Result<usize> {
        check_index("state", s.base, self.num_states)?;
        check_index("goal", s.goal, self.num_goals)?;
        check_index("decision clock", s.clock, self.epoch_length)?;
        Ok(self.index(s))
    }

    pub fn iter(&self) -> impl Iterator<Item = LowState> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }
}

/// How `r^l` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowRewardMode {
    /// `1[s = omega]`
    Indicator,
    /// `1[s = omega] + c_ext * r(s, a)`
    IndicatorPlusExtrinsic,
    /// Explicit table over `S^l x A`.
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LowRewardSpec {
    Indicator,
    IndicatorPlusExtrinsic { weight: f64 },
    Table(Table),
}

/// Construction parameters for [`FeudalProblem`].
#[derive(Debug, Clone)]
pub struct FeudalOptions {
    /// Goal state ids; `None` means `Omega = S`.
    pub goals: Option<Vec<usize>>,
    pub epoch_length: usize,
    /// `None` means use the flat discount.
    pub gamma_high: Option<f64>,
    pub gamma_low: f64,
    pub low_reward: LowRewardSpec,
    pub enumeration_cap: u128,
}

impl Default for FeudalOptions {
    fn default() -> Self {
        Self {
            goals: None,
            epoch_length: 1,
            gamma_high: None,
            gamma_low: 0.9,
            low_reward: LowRewardSpec::Indicator,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// A flat MDP together with the designer's choices for the two levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeudalProblemDocument", into = "FeudalProblemDocument")]
pub struct FeudalProblem {
    flat: FlatMdp,
    goals: Vec<usize>,
    epoch_length: usize,
    gamma_high: f64,
    gamma_low: f64,
    low_reward: Table,
    low_reward_bound: f64,
    low_reward_mode: LowRewardMode,
    extrinsic_weight: f64,
    enumeration_cap: u128,
}

impl FeudalProblem {
    pub fn new(flat: FlatMdp, options: FeudalOptions) -> Result<Self> {
        let ns = flat.num_states();
        let na = flat.num_actions();
        let goals = options.goals.unwrap_or_else(|| (0..ns).collect());
        if goals.is_empty() {
            return Err(Error::Domain("goal space must not be empty".into()));
        }
        for &g in &goals {
            check_index("goal state", g, ns)?;
        }
        if options.epoch_length == 0 {
            return Err(Error::Domain("epoch length must be at least 1".into()));
        }
        let gamma_high = options.gamma_high.unwrap_or(flat.discount());
        for (name, g) in [("gamma_high", gamma_high), ("gamma_low", options.gamma_low)] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Domain(format!("{name} = {g} outside (0, 1)")));
            }
        }
        let space = LowStateSpace::new(ns, goals.len(), options.epoch_length);
        let (mode, weight, low_reward) = match options.low_reward {
            LowRewardSpec::Indicator => (
                LowRewardMode::Indicator,
                0.0,
                indicator_table(&flat, &goals, space, 0.0),
            ),
            LowRewardSpec::IndicatorPlusExtrinsic { weight } => (
                LowRewardMode::IndicatorPlusExtrinsic,
                weight,
                indicator_table(&flat, &goals, space, weight),
            ),
            LowRewardSpec::Table(t) => {
                t.expect_shape(space.len(), na, "low-level reward table")?;
                (LowRewardMode::Table, 0.0, t)
            }
        };
        if !low_reward.is_finite() {
            return Err(Error::InvalidModel("low-level reward has non-finite entries".into()));
        }
        let low_reward_bound = low_reward.max_abs();
        Ok(Self {
            flat,
            goals,
            epoch_length: options.epoch_length,
            gamma_high,
            gamma_low: options.gamma_low,
            low_reward,
            low_reward_bound,
            low_reward_mode: mode,
            extrinsic_weight: weight,
            enumeration_cap: options.enumeration_cap,
        })
    }

    pub fn flat(&self) -> &FlatMdp {
        &self.flat
    }

    pub fn num_states(&self) -> usize {
        self.flat.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.flat.num_actions()
    }

    pub fn num_goals(&self) -> usize {
        self.goals.len()
    }

    /// Goal index to flat state id.
    pub fn goals(&self) -> &[usize] {
        &self.goals
    }

    pub fn epoch_length(&self) -> usize {
        self.epoch_length
    }

    pub fn gamma_high(&self) -> f64 {
        self.gamma_high
    }

    pub fn gamma_low(&self) -> f64 {
        self.gamma_low
    }

    /// `(gamma^h)^T`, the modulus of the high-level Bellman operator.
    pub fn high_discount(&self) -> f64 {
        self.gamma_high.powi(self.epoch_length as i32)
    }

    pub fn low_space(&self) -> LowStateSpace {
        LowStateSpace::new(self.num_states(), self.num_goals(), self.epoch_length)
    }

    pub fn num_low_states(&self) -> usize {
        self.low_space().len()
    }

    pub fn low_reward_table(&self) -> &Table {
        &self.low_reward
    }

    #[inline]
    pub fn low_reward(&self, low_index: usize, action: usize) -> f64 {
        self.low_reward.get(low_index, action)
    }

    pub fn low_reward_bound(&self) -> f64 {
        self.low_reward_bound
    }

    pub fn low_reward_mode(&self) -> LowRewardMode {
        self.low_reward_mode
    }

    pub fn enumeration_cap(&self) -> u128 {
        self.enumeration_cap
    }

    pub fn with_enumeration_cap(mut self, cap: u128) -> Self {
        self.enumeration_cap = cap;
        self
    }

    /// Number of trajectory terms `|S|^(T-1) * |A|^T` in the exact sum.
    pub fn enumeration_terms(&self) -> u128 {
        let s = self.num_states() as u128;
        let a = self.num_actions() as u128;
        let t = self.epoch_length as u32;
        s.saturating_pow(t - 1).saturating_mul(a.saturating_pow(t))
    }

    pub fn check_enumerable(&self) -> Result<()> {
        let terms = self.enumeration_terms();
        if terms > self.enumeration_cap {
            Err(Error::InstanceTooLarge {
                terms,
                cap: self.enumeration_cap,
            })
        } else {
            Ok(())
        }
    }

    /// Bound on `|r^h|`: `r_bar * (1 - gamma^T) / (1 - gamma)`.
    pub fn high_reward_bound(&self) -> f64 {
        let g = self.gamma_high;
        self.flat.reward_bound() * (1.0 - self.high_discount()) / (1.0 - g)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn indicator_table(flat: &FlatMdp, goals: &[usize], space: LowStateSpace, weight: f64) -> Table {
    let na = flat.num_actions();
    Table::from_fn(space.len(), na, |i, a| {
        let ls = space.state(i);
        let hit = if goals[ls.goal] == ls.base { 1.0 } else { 0.0 };
        if weight == 0.0 {
            hit
        } else {
            hit + weight * flat.reward(ls.base, a)
        }
    })
}

/// JSON layout: the flat MDP keys plus the feudal fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeudalProblemDocument {
    #[serde(flatten)]
    pub flat: FlatMdpDocument,
    #[serde(default)]
    pub goal_space: Option<Vec<usize>>,
    pub epoch_length: usize,
    #[serde(default)]
    pub gamma_high: Option<f64>,
    pub gamma_low: f64,
    pub low_reward_mode: LowRewardMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsic_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_reward: Option<Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumeration_cap: Option<u64>,
}

impl TryFrom<FeudalProblemDocument> for FeudalProblem {
    type Error = Error;

    fn try_from(doc: FeudalProblemDocument) -> Result<Self> {
        let flat = FlatMdp::try_from(doc.flat)?;
        let low_reward = match doc.low_reward_mode {
            LowRewardMode::Indicator => LowRewardSpec::Indicator,
            LowRewardMode::IndicatorPlusExtrinsic => LowRewardSpec::IndicatorPlusExtrinsic {
                weight: doc.extrinsic_weight.ok_or_else(|| {
                    Error::Config("indicator_plus_extrinsic needs `extrinsic_weight`".into())
                })?,
            },
            LowRewardMode::Table => LowRewardSpec::Table(doc.low_reward.ok_or_else(|| {
                Error::Config("low_reward_mode = table needs a `low_reward` table".into())
            })?),
        };
        FeudalProblem::new(
            flat,
            FeudalOptions {
                goals: doc.goal_space,
                epoch_length: doc.epoch_length,
                gamma_high: doc.gamma_high,
                gamma_low: doc.gamma_low,
                low_reward,
                enumeration_cap: doc
                    .enumeration_cap
                    .map_or(DEFAULT_ENUMERATION_CAP, u128::from),
            },
        )
    }
}

impl From<FeudalProblem> for FeudalProblemDocument {
    fn from(p: FeudalProblem) -> Self {
        let (extrinsic_weight, low_reward) = match p.low_reward_mode {
            LowRewardMode::Indicator => (None, None),
            LowRewardMode::IndicatorPlusExtrinsic => (Some(p.extrinsic_weight), None),
            LowRewardMode::Table => (None, Some(p.low_reward.clone())),
        };
        let enumeration_cap = (p.enumeration_cap != DEFAULT_ENUMERATION_CAP)
            .then(|| u64::try_from(p.enumeration_cap).unwrap_or(u64::MAX));
        Self {
            flat: p.flat.into(),
            goal_space: Some(p.goals),
            epoch_length: p.epoch_length,
            gamma_high: Some(p.gamma_high),
            gamma_low: p.gamma_low,
            low_reward_mode: p.low_reward_mode,
            extrinsic_weight,
            low_reward,
            enumeration_cap,
        }
    }
}

/// Distribution of `s_T` and expected discounted reward of one epoch.
struct EpochOutcome {
    terminal: Vec<f64>,
    reward: f64,
}

/// Propagates the state distribution through one epoch under `low_policy`
/// with the goal frozen and the clock running `0..T-1`.
fn propagate_epoch(
    problem: &FeudalProblem,
    low_policy: &Table,
    start: usize,
    goal: usize,
) -> EpochOutcome {
    let flat = problem.flat();
    let ns = flat.num_states();
    let na = flat.num_actions();
    let space = problem.low_space();
    let mut dist = vec![0.0; ns];
    dist[start] = 1.0;
    let mut next = vec![0.0; ns];
    let mut reward = 0.0;
    let mut discount = 1.0;
    for clock in 0..problem.epoch_length() {
        next.iter_mut().for_each(|p| *p = 0.0);
        let mut step_reward = 0.0;
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let probs = low_policy.row(space.index_of(s, goal, clock));
            for (a, &pa) in probs.iter().enumerate().take(na) {
                let w = mass * pa;
                if w == 0.0 {
                    continue;
                }
                step_reward += w * flat.reward(s, a);
                for (n, &p) in flat.row(s, a).iter().enumerate() {
                    if p != 0.0 {
                        next[n] += w * p;
                    }
                }
            }
        }
        reward += discount * step_reward;
        discount *= problem.gamma_high();
        std::mem::swap(&mut dist, &mut next);
    }
    EpochOutcome {
        terminal: dist,
        reward,
    }
}

fn check_low_policy(problem: &FeudalProblem, low_policy: &Table) -> Result<()> {
    check_stochastic(
        low_policy,
        problem.num_low_states(),
        problem.num_actions(),
        "low-level policy",
    )
}

fn check_high_policy(problem: &FeudalProblem, high_policy: &Table) -> Result<()> {
    check_stochastic(
        high_policy,
        problem.num_states(),
        problem.num_goals(),
        "high-level policy",
    )
}

/// `P^h_{pi^l}[s][omega][s']`: probability of landing in `s'` after one epoch
/// started in `s` with goal `omega`.
pub fn compose_high_dynamics(problem: &FeudalProblem, low_policy: &Table) -> Result<Kernel> {
    problem.check_enumerable()?;
    check_low_policy(problem, low_policy)?;
    let ns = problem.num_states();
    let ng = problem.num_goals();
    let mut kernel = Kernel::zeros(ns, ng, ns);
    for s in 0..ns {
        for g in 0..ng {
            let out = propagate_epoch(problem, low_policy, s, g);
            kernel.row_mut(s, g).copy_from_slice(&out.terminal);
        }
    }
    Ok(kernel)
}

/// `r^h_{pi^l}(s, omega) = E[sum_{k<T} (gamma^h)^k r(s_k, a_k) | s_0 = s]`.
pub fn high_reward(
    problem: &FeudalProblem,
    low_policy: &Table,
    state: usize,
    goal: usize,
) -> Result<f64> {
    problem.check_enumerable()?;
    check_low_policy(problem, low_policy)?;
    check_index("state", state, problem.num_states())?;
    check_index("goal", goal, problem.num_goals())?;
    Ok(propagate_epoch(problem, low_policy, state, goal).reward)
}

/// [`high_reward`] for every `(s, omega)`.
pub fn high_reward_table(problem: &FeudalProblem, low_policy: &Table) -> Result<Table> {
    problem.check_enumerable()?;
    check_low_policy(problem, low_policy)?;
    Ok(Table::from_fn(problem.num_states(), problem.num_goals(), |s, g| {
        propagate_epoch(problem, low_policy, s, g).reward
    }))
}

/// Both compositions in one pass.
pub fn compose_high_model(problem: &FeudalProblem, low_policy: &Table) -> Result<(Kernel, Table)> {
    problem.check_enumerable()?;
    check_low_policy(problem, low_policy)?;
    let ns = problem.num_states();
    let ng = problem.num_goals();
    let mut kernel = Kernel::zeros(ns, ng, ns);
    let mut reward = Table::zeros(ns, ng);
    for s in 0..ns {
        for g in 0..ng {
            let out = propagate_epoch(problem, low_policy, s, g);
            kernel.row_mut(s, g).copy_from_slice(&out.terminal);
            reward.set(s, g, out.reward);
        }
    }
    Ok((kernel, reward))
}

/// `P^l_{pi^h}[s^l][a][s^l']` as a dense kernel.
///
/// Off-boundary the goal is frozen and the clock advances; at `s^de = T-1` the
/// next goal is drawn from `pi^h(. | s')` and the clock wraps to 0.
pub fn compose_low_dynamics(problem: &FeudalProblem, high_policy: &Table) -> Result<Kernel> {
    check_high_policy(problem, high_policy)?;
    let space = problem.low_space();
    let na = problem.num_actions();
    let ng = problem.num_goals();
    let t = problem.epoch_length();
    let flat = problem.flat();
    let mut kernel = Kernel::zeros(space.len(), na, space.len());
    for i in 0..space.len() {
        let ls = space.state(i);
        for a in 0..na {
            for (s_next, &p) in flat.row(ls.base, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if ls.clock + 1 < t {
                    let j = space.index_of(s_next, ls.goal, ls.clock + 1);
                    let cur = kernel.get(i, a, j);
                    kernel.set(i, a, j, cur + p);
                } else {
                    for g in 0..ng {
                        let pg = high_policy.get(s_next, g);
                        if pg == 0.0 {
                            continue;
                        }
                        let j = space.index_of(s_next, g, 0);
                        let cur = kernel.get(i, a, j);
                        kernel.set(i, a, j, cur + p * pg);
                    }
                }
            }
        }
    }
    Ok(kernel)
}

/// One sampled epoch: terminal state plus the extrinsic reward window.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSample {
    pub terminal: usize,
    pub rewards: Vec<f64>,
    pub discounted_reward: f64,
}

/// Simulates `T` low-level steps from `s` under `low_policy` with goal frozen.
pub fn sample_epoch(
    problem: &FeudalProblem,
    low_policy: &Table,
    start: usize,
    goal: usize,
    rng: &mut RngStream,
) -> EpochSample {
    let space = problem.low_space();
    let flat = problem.flat();
    let mut s = start;
    let mut rewards = Vec::with_capacity(problem.epoch_length());
    let mut discounted = 0.0;
    let mut discount = 1.0;
    for clock in 0..problem.epoch_length() {
        let a = rng.categorical(low_policy.row(space.index_of(s, goal, clock)));
        let r = flat.reward(s, a);
        rewards.push(r);
        discounted += discount * r;
        discount *= problem.gamma_high();
        s = rng.categorical(flat.row(s, a));
    }
    EpochSample {
        terminal: s,
        rewards,
        discounted_reward: discounted,
    }
}

/// Samples the low-level successor of `(s^l, a)` under `high_policy`.
pub fn sample_low_successor(
    problem: &FeudalProblem,
    high_policy: &Table,
    state: LowState,
    action: usize,
    rng: &mut RngStream,
) -> LowState {
    let s_next = rng.categorical(problem.flat().row(state.base, action));
    if state.clock + 1 < problem.epoch_length() {
        LowState {
            base: s_next,
            goal: state.goal,
            clock: state.clock + 1,
        }
    } else {
        LowState {
            base: s_next,
            goal: rng.categorical(high_policy.row(s_next)),
            clock: 0,
        }
    }
}

/// Monte Carlo estimate of one row of `P^h` and of `r^h`.
#[derive(Debug, Clone)]
pub struct HighRowEstimate {
    pub frequencies: Vec<f64>,
    pub mean_reward: f64,
    pub reward_stdev: f64,
    pub rollouts: usize,
}

pub fn estimate_high_row(
    problem: &FeudalProblem,
    low_policy: &Table,
    start: usize,
    goal: usize,
    rollouts: usize,
    rng: &mut RngStream,
) -> Result<HighRowEstimate> {
    check_low_policy(problem, low_policy)?;
    check_index("state", start, problem.num_states())?;
    check_index("goal", goal, problem.num_goals())?;
    if rollouts < 2 {
        return Err(Error::Domain("need at least 2 rollouts".into()));
    }
    let mut counts = vec![0usize; problem.num_states()];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..rollouts {
        let ep = sample_epoch(problem, low_policy, start, goal, rng);
        counts[ep.terminal] += 1;
        sum += ep.discounted_reward;
        sum_sq += ep.discounted_reward * ep.discounted_reward;
    }
    let n = rollouts as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(HighRowEstimate {
        frequencies: counts.iter().map(|&c| c as f64 / n).collect(),
        mean_reward: mean,
        reward_stdev: var.sqrt(),
        rollouts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{flip_feudal, flip_mdp, random_feudal, RandomFeudalSpec};
    use crate::policy::{greedy_policy, uniform_policy};

    #[test]
    fn clock_recursion() {
        assert_eq!(next_decision_state(0, 3).unwrap(), 1);
        assert_eq!(next_decision_state(2, 3).unwrap(), 0);
        assert_eq!(next_decision_state(0, 1).unwrap(), 0);
        assert!(matches!(next_decision_state(3, 3), Err(Error::OutOfRange { .. })));
        assert!(next_decision_state(0, 0).is_err());

        let mut c = DecisionEpochClock::new(3).unwrap();
        let seen: Vec<usize> = (0..7)
            .map(|_| {
                let v = c.value();
                c.advance();
                v
            })
            .collect();
        assert_eq!(seen, vec![0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn low_space_roundtrip() {
        let space = LowStateSpace::new(3, 2, 4);
        assert_eq!(space.len(), 24);
        for i in 0..space.len() {
            assert_eq!(space.index(space.state(i)), i);
        }
        assert!(space
            .checked_index(LowState { base: 0, goal: 2, clock: 0 })
            .is_err());
    }

    fn flip_with_t(t: usize) -> FeudalProblem {
        FeudalProblem::new(
            flip_mdp(0.9),
            FeudalOptions {
                epoch_length: t,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn t1_high_dynamics_is_one_step_average() {
        let p = flip_with_t(1);
        let mut pol = uniform_policy(p.num_low_states(), 2);
        pol.row_mut(p.low_space().index_of(0, 1, 0)).copy_from_slice(&[0.3, 0.7]);
        let k = compose_high_dynamics(&p, &pol).unwrap();
        // from 0 under goal 1: stay w.p. 0.3 -> 0, flip w.p. 0.7 -> 1
        assert!((k.get(0, 1, 0) - 0.3).abs() < 1e-15);
        assert!((k.get(0, 1, 1) - 0.7).abs() < 1e-15);
        let r = high_reward(&p, &pol, 1, 0).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flip_t2_uniform_dynamics() {
        let p = flip_with_t(2);
        let pol = uniform_policy(p.num_low_states(), 2);
        let k = compose_high_dynamics(&p, &pol).unwrap();
        for g in 0..2 {
            assert!((k.get(0, g, 0) - 0.5).abs() < 1e-15);
            assert!((k.get(0, g, 1) - 0.5).abs() < 1e-15);
        }
        assert!(k.max_row_sum_error() < 1e-10);
    }

    #[test]
    fn flip_t2_high_reward() {
        let p = flip_with_t(2);
        let pol = uniform_policy(p.num_low_states(), 2);
        let r = high_reward(&p, &pol, 1, 0).unwrap();
        assert!((r - 1.45).abs() < 1e-12, "{r}");
    }

    #[test]
    fn zero_reward_zero_high_reward() {
        let flat = crate::mdp::FlatMdp::new(
            flip_mdp(0.9).transition().clone(),
            Table::zeros(2, 2),
            0.9,
        )
        .unwrap();
        let p = FeudalProblem::new(flat, FeudalOptions { epoch_length: 3, ..Default::default() })
            .unwrap();
        let pol = uniform_policy(p.num_low_states(), 2);
        let t = high_reward_table(&p, &pol).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn enumeration_cap_refuses() {
        let p = flip_with_t(3).with_enumeration_cap(10);
        let pol = uniform_policy(p.num_low_states(), 2);
        assert_eq!(p.enumeration_terms(), 4 * 8);
        assert!(matches!(
            compose_high_dynamics(&p, &pol),
            Err(Error::InstanceTooLarge { terms: 32, cap: 10 })
        ));
    }

    #[test]
    fn bad_policy_rejected() {
        let p = flip_with_t(2);
        let pol = Table::filled(p.num_low_states(), 2, 0.4);
        assert!(compose_high_dynamics(&p, &pol).is_err());
    }

    #[test]
    fn low_dynamics_cases() {
        let p = flip_feudal();
        let space = p.low_space();
        let mut high = Table::zeros(2, 2);
        // pi^h(goal 1 | s) = 1 for every s
        high.set(0, 1, 1.0);
        high.set(1, 1, 1.0);
        let k = compose_low_dynamics(&p, &high).unwrap();
        assert!(k.max_row_sum_error() < 1e-10);
        // off-boundary, goal switch impossible
        let from = space.index_of(0, 0, 0);
        for s_next in 0..2 {
            assert_eq!(k.get(from, 1, space.index_of(s_next, 1, 1)), 0.0);
        }
        // off-boundary, same goal: P(s'|s,a) on the clock successor
        assert_eq!(k.get(from, 1, space.index_of(1, 0, 1)), 1.0);
        // boundary: all mass on goal 1, clock 0
        let from = space.index_of(0, 0, 1);
        assert_eq!(k.get(from, 0, space.index_of(0, 1, 0)), 1.0);
        assert_eq!(k.get(from, 0, space.index_of(0, 0, 0)), 0.0);
    }

    #[test]
    fn boundary_goal_drawn_at_landing_state() {
        let p = flip_feudal();
        let space = p.low_space();
        let mut high = Table::zeros(2, 2);
        high.set(0, 0, 1.0); // in state 0 pick goal 0
        high.set(1, 1, 1.0); // in state 1 pick goal 1
        let k = compose_low_dynamics(&p, &high).unwrap();
        // from (0, goal 0, clock 1) flipping lands in 1, where goal 1 is picked
        let from = space.index_of(0, 0, 1);
        assert_eq!(k.get(from, 1, space.index_of(1, 1, 0)), 1.0);
    }

    #[test]
    fn json_roundtrip_keeps_feudal_keys() {
        let p = flip_feudal();
        let v = serde_json::to_value(&p).unwrap();
        for key in ["goal_space", "epoch_length", "gamma_high", "gamma_low", "low_reward_mode", "transition"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["low_reward_mode"], "indicator");
        let back: FeudalProblem = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);

        let q = random_feudal(&RandomFeudalSpec::default(), 3);
        let back: FeudalProblem = serde_json::from_value(serde_json::to_value(&q).unwrap()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn gamma_high_defaults_to_flat_discount() {
        let p = FeudalProblem::new(flip_mdp(0.8), FeudalOptions::default()).unwrap();
        assert_eq!(p.gamma_high(), 0.8);
    }

    #[test]
    fn greedy_high_reward_on_flip() {
        let p = flip_feudal();
        let low = greedy_policy(&Table::zeros(p.num_low_states(), 2));
        // all-stay low policy from state 1: reward 1 + 0.9
        assert!((high_reward(&p, &low, 1, 0).unwrap() - 1.9).abs() < 1e-12);
    }
}
