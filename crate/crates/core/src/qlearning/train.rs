use serde::{Deserialize, Serialize};

use super::schedule::{StepCounting, StepSizeSchedule, TemperatureClock};
use super::{
    high_table_bound, high_update_unchecked, low_table_bound, low_update_unchecked, QTablePair,
};
use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::mdp::FlatMdp;
use crate::policy::{boltzmann_probs_into, BoltzmannSchedule, VisitCounter};
use crate::rng::RngStream;
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartState {
    Fixed { state: usize },
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub seed: u64,
    pub step_sizes: StepSizeSchedule,
    pub step_counting: StepCounting,
    pub policy_low: BoltzmannSchedule,
    pub policy_high: BoltzmannSchedule,
    pub temperature_clock: TemperatureClock,
    /// Every entry of both tables starts here.
    pub initial_q: f64,
    pub start: StartState,
    /// Table norms are checked against the analytic bounds this often (in low-level steps).
    pub bound_check_interval: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 1,
            steps_per_episode: 300,
            seed: 0,
            step_sizes: StepSizeSchedule::default(),
            step_counting: StepCounting::PerLevel,
            policy_low: BoltzmannSchedule::default(),
            policy_high: BoltzmannSchedule::default(),
            temperature_clock: TemperatureClock::PerLevel,
            initial_q: 0.0,
            start: StartState::Fixed { state: 0 },
            bound_check_interval: 10_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.step_sizes.validate()?;
        self.policy_low.validate()?;
        self.policy_high.validate()?;
        if !self.initial_q.is_finite() {
            return Err(Error::Domain("initial Q value must be finite".into()));
        }
        if self.bound_check_interval == 0 {
            return Err(Error::Domain("bound check interval must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.episodes as u64 * self.steps_per_episode as u64
    }
}

/// One row of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub episode: usize,
    /// Undiscounted sum of the extrinsic reward over the episode.
    pub cum_reward: f64,
    pub low_steps: u64,
    pub high_decisions: u64,
    pub tau_high: f64,
    pub tau_low: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub step: u64,
    pub level: String,
    pub norm: f64,
    pub bound: f64,
}

/// Periodic comparison of the iterates against the analytic bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub low_bound: f64,
    pub high_bound: f64,
    pub checks: u64,
    pub max_low_norm: f64,
    pub max_high_norm: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundReport {
    fn new(low_bound: f64, high_bound: f64) -> Self {
        Self {
            low_bound,
            high_bound,
            checks: 0,
            max_low_norm: 0.0,
            max_high_norm: 0.0,
            violations: Vec::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, step: u64, low: Option<&Table>, high: Option<&Table>) {
        self.checks += 1;
        let slack = |b: f64| b * (1.0 + 1e-12) + 1e-12;
        if let Some(t) = low {
            let norm = t.max_abs();
            self.max_low_norm = self.max_low_norm.max(norm);
            if !(norm <= slack(self.low_bound)) {
                self.violations.push(BoundViolation {
                    step,
                    level: "low".into(),
                    norm,
                    bound: self.low_bound,
                });
            }
        }
        if let Some(t) = high {
            let norm = t.max_abs();
            self.max_high_norm = self.max_high_norm.max(norm);
            if !(norm <= slack(self.high_bound)) {
                self.violations.push(BoundViolation {
                    step,
                    level: "high".into(),
                    norm,
                    bound: self.high_bound,
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub tables: QTablePair,
    pub logs: Vec<EpisodeLog>,
    pub bounds: BoundReport,
    pub low_updates: u64,
    pub high_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatOutcome {
    pub q: Table,
    pub logs: Vec<EpisodeLog>,
    pub bounds: BoundReport,
}

/// Non-zero transition entries, sampled in ascending index order so draws
/// match inverse-CDF sampling over the dense row.
struct SparseKernel {
    num_actions: usize,
    offsets: Vec<usize>,
    next: Vec<usize>,
    probs: Vec<f64>,
}

impl SparseKernel {
    fn new(mdp: &FlatMdp) -> Self {
        let mut offsets = vec![0];
        let mut next = Vec::new();
        let mut probs = Vec::new();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                for (n, &p) in mdp.row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        next.push(n);
                        probs.push(p);
                    }
                }
                offsets.push(next.len());
            }
        }
        Self {
            num_actions: mdp.num_actions(),
            offsets,
            next,
            probs,
        }
    }

    #[inline]
    fn sample(&self, s: usize, a: usize, rng: &mut RngStream) -> usize {
        let row = s * self.num_actions + a;
        let (lo, hi) = (self.offsets[row], self.offsets[row + 1]);
        if hi - lo == 1 {
            return self.next[lo];
        }
        let u = rng.uniform();
        let mut cumulative = 0.0;
        for i in lo..hi {
            cumulative += self.probs[i];
            if u < cumulative {
                return self.next[i];
            }
        }
        self.next[hi - 1]
    }
}

fn start_state(start: StartState, num_states: usize, rng: &mut RngStream) -> Result<usize> {
    match start {
        StartState::Fixed { state } => {
            crate::error::check_index("start state", state, num_states)?;
            Ok(state)
        }
        StartState::Uniform => Ok(rng.index(num_states)),
    }
}

/// Counters for one level of the learner.
struct LevelCounters {
    updates: u64,
    decisions: u64,
    entries: VisitCounter,
    state_visits: Vec<u64>,
}

impl LevelCounters {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            updates: 0,
            decisions: 0,
            entries: VisitCounter::new(rows, cols),
            state_visits: vec![0; rows],
        }
    }

    #[inline]
    fn temperature(&self, schedule: &BoltzmannSchedule, clock: TemperatureClock, state: usize) -> f64 {
        let n = match clock {
            TemperatureClock::PerLevel => self.decisions,
            TemperatureClock::PerState => self.state_visits[state],
        };
        schedule.temperature(n)
    }

    #[inline]
    fn decide(&mut self, state: usize) {
        self.decisions += 1;
        self.state_visits[state] += 1;
    }

    /// Step-size index for the next update of `(state, col)`, then records it.
    #[inline]
    fn step_index(&mut self, counting: StepCounting, state: usize, col: usize) -> u64 {
        let n = match counting {
            StepCounting::PerLevel => self.updates,
            StepCounting::PerEntry => self.entries.count(state, col),
        };
        self.updates += 1;
        self.entries.record(state, col);
        n
    }
}

#[inline]
fn sample_boltzmann(row: &[f64], temperature: f64, scratch: &mut [f64], rng: &mut RngStream) -> usize {
    boltzmann_probs_into(row, temperature, scratch);
    rng.categorical(scratch)
}

/// Feudal Q-learning from zero (or `config.initial_q`) tables.
pub fn train_feudal(
    problem: &FeudalProblem,
    config: &TrainingConfig,
    rng: &mut RngStream,
) -> Result<TrainingOutcome> {
    train_feudal_from(problem, config, QTablePair::filled(problem, config.initial_q), rng)
}

/// Feudal Q-learning from the given tables with fresh counters.
///
/// At every epoch start the high level draws a goal from a Boltzmann policy
/// on `Q^h`; every step the low level draws an action from a Boltzmann policy
/// on `Q^l` and applies the low-level update. At the last step of an epoch the
/// high-level update uses the buffered `T` extrinsic rewards, and the next
/// goal is drawn at the landing state before the low-level bootstrap.
pub fn train_feudal_from(
    problem: &FeudalProblem,
    config: &TrainingConfig,
    initial: QTablePair,
    rng: &mut RngStream,
) -> Result<TrainingOutcome> {
    config.validate()?;
    initial.check(problem)?;
    let flat = problem.flat();
    let kernel = SparseKernel::new(flat);
    let space = problem.low_space();
    let t = problem.epoch_length();
    let (gamma_h, gamma_l) = (problem.gamma_high(), problem.gamma_low());
    let mut q = initial;
    let mut bounds = BoundReport::new(
        low_table_bound(problem, q.low.max_abs()),
        high_table_bound(problem, q.high.max_abs()),
    );
    let mut low = LevelCounters::new(problem.num_low_states(), problem.num_actions());
    let mut high = LevelCounters::new(problem.num_states(), problem.num_goals());
    let mut low_scratch = vec![0.0; problem.num_actions()];
    let mut high_scratch = vec![0.0; problem.num_goals()];
    let mut window = Vec::with_capacity(t);
    let mut logs = Vec::with_capacity(config.episodes);
    let mut step: u64 = 0;

    for episode in 0..config.episodes {
        let mut log = EpisodeLog {
            seed: config.seed,
            episode,
            cum_reward: 0.0,
            low_steps: 0,
            high_decisions: 0,
            tau_high: 0.0,
            tau_low: 0.0,
        };
        if config.steps_per_episode == 0 {
            logs.push(log);
            continue;
        }
        let mut s = start_state(config.start, flat.num_states(), rng)?;
        let mut clock = 0;
        log.tau_high = high.temperature(&config.policy_high, config.temperature_clock, s);
        let mut goal = sample_boltzmann(q.high.row(s), log.tau_high, &mut high_scratch, rng);
        high.decide(s);
        let mut epoch_start = s;
        window.clear();

        for _ in 0..config.steps_per_episode {
            if clock == 0 {
                log.high_decisions += 1;
            }
            let ls = space.index_of(s, goal, clock);
            log.tau_low = low.temperature(&config.policy_low, config.temperature_clock, ls);
            let a = sample_boltzmann(q.low.row(ls), log.tau_low, &mut low_scratch, rng);
            low.decide(ls);
            let r = flat.reward(s, a);
            let s_next = kernel.sample(s, a, rng);
            window.push(r);
            log.cum_reward += r;

            let (next_goal, next_clock) = if clock + 1 < t {
                (goal, clock + 1)
            } else {
                let n = high.step_index(config.step_counting, epoch_start, goal);
                let beta = config.step_sizes.beta(n);
                high_update_unchecked(&mut q.high, epoch_start, goal, &window, s_next, beta, gamma_h);
                window.clear();
                log.tau_high = high.temperature(&config.policy_high, config.temperature_clock, s_next);
                let g = sample_boltzmann(q.high.row(s_next), log.tau_high, &mut high_scratch, rng);
                high.decide(s_next);
                (g, 0)
            };

            let ls_next = space.index_of(s_next, next_goal, next_clock);
            let n = low.step_index(config.step_counting, ls, a);
            let alpha = config.step_sizes.alpha(n);
            low_update_unchecked(&mut q.low, ls, a, problem.low_reward(ls, a), ls_next, alpha, gamma_l);

            step += 1;
            log.low_steps += 1;
            if step.is_multiple_of(config.bound_check_interval) {
                bounds.check(step, Some(&q.low), Some(&q.high));
            }
            s = s_next;
            goal = next_goal;
            clock = next_clock;
            if clock == 0 {
                epoch_start = s;
            }
        }
        logs.push(log);
    }
    bounds.check(step, Some(&q.low), Some(&q.high));
    Ok(TrainingOutcome {
        tables: q,
        logs,
        bounds,
        low_updates: low.updates,
        high_updates: high.updates,
    })
}

/// Watkins Q-learning on the flat MDP with the fast step size and the
/// low-level exploration schedule.
pub fn train_flat_watkins(
    mdp: &FlatMdp,
    config: &TrainingConfig,
    rng: &mut RngStream,
) -> Result<FlatOutcome> {
    let q0 = Table::filled(mdp.num_states(), mdp.num_actions(), config.initial_q);
    train_flat_watkins_from(mdp, config, q0, rng)
}

pub fn train_flat_watkins_from(
    mdp: &FlatMdp,
    config: &TrainingConfig,
    initial: Table,
    rng: &mut RngStream,
) -> Result<FlatOutcome> {
    config.validate()?;
    initial.expect_shape(mdp.num_states(), mdp.num_actions(), "flat Q-table")?;
    let kernel = SparseKernel::new(mdp);
    let gamma = mdp.discount();
    let mut q = initial;
    let mut bounds = BoundReport::new(mdp.reward_bound() / (1.0 - gamma) + q.max_abs(), 0.0);
    let mut counters = LevelCounters::new(mdp.num_states(), mdp.num_actions());
    let mut scratch = vec![0.0; mdp.num_actions()];
    let mut logs = Vec::with_capacity(config.episodes);
    let mut step: u64 = 0;

    for episode in 0..config.episodes {
        let mut log = EpisodeLog {
            seed: config.seed,
            episode,
            cum_reward: 0.0,
            low_steps: 0,
            high_decisions: 0,
            tau_high: 0.0,
            tau_low: 0.0,
        };
        if config.steps_per_episode > 0 {
            let mut s = start_state(config.start, mdp.num_states(), rng)?;
            for _ in 0..config.steps_per_episode {
                log.tau_low = counters.temperature(&config.policy_low, config.temperature_clock, s);
                let a = sample_boltzmann(q.row(s), log.tau_low, &mut scratch, rng);
                counters.decide(s);
                let r = mdp.reward(s, a);
                let s_next = kernel.sample(s, a, rng);
                let n = counters.step_index(config.step_counting, s, a);
                low_update_unchecked(&mut q, s, a, r, s_next, config.step_sizes.alpha(n), gamma);
                log.cum_reward += r;
                log.low_steps += 1;
                step += 1;
                if step.is_multiple_of(config.bound_check_interval) {
                    bounds.check(step, Some(&q), None);
                }
                s = s_next;
            }
        }
        logs.push(log);
    }
    bounds.check(step, Some(&q), None);
    Ok(FlatOutcome { q, logs, bounds })
}
