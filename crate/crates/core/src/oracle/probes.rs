//! Numerical checks of the analytic properties used in the convergence proof:
//! contraction, martingale noise, scaled-field limits and Lipschitz estimates.

use serde::{Deserialize, Serialize};

use super::bellman::{BellmanOperator, LowLevelModel};
use super::ode::MeanFieldContext;
use crate::error::{Error, Result};
use crate::feudal::sample_epoch;
use crate::policy::{greedy_policy, PolicyExtractor};
use crate::qlearning::QTablePair;
use crate::rng::RngStream;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub modulus: f64,
    /// `max ||T a - T b|| / ||a - b||` over the probed pairs.
    pub max_ratio: f64,
    pub pairs: usize,
    pub skipped: usize,
}

impl ContractionEstimate {
    pub fn holds(&self, slack: f64) -> bool {
        self.max_ratio <= self.modulus + slack
    }
}

/// Tables with entries uniform in `[-scale, scale]`.
pub fn random_table(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Table {
    Table::from_fn(rows, cols, |_, _| rng.uniform_in(-scale, scale))
}

pub fn random_table_pairs(
    rows: usize,
    cols: usize,
    count: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Vec<(Table, Table)> {
    (0..count)
        .map(|_| (random_table(rows, cols, scale, rng), random_table(rows, cols, scale, rng)))
        .collect()
}

pub fn random_pair(
    problem: &crate::feudal::FeudalProblem,
    scale: f64,
    rng: &mut RngStream,
) -> QTablePair {
    QTablePair {
        high: random_table(problem.num_states(), problem.num_goals(), scale, rng),
        low: random_table(problem.num_low_states(), problem.num_actions(), scale, rng),
    }
}

pub fn contraction_ratio(operator: &dyn BellmanOperator, pairs: &[(Table, Table)]) -> ContractionEstimate {
    let mut max_ratio: f64 = 0.0;
    let mut skipped = 0;
    for (a, b) in pairs {
        let d = a.sup_distance(b);
        if d == 0.0 {
            skipped += 1;
            continue;
        }
        max_ratio = max_ratio.max(operator.apply(a).sup_distance(&operator.apply(b)) / d);
    }
    ContractionEstimate {
        modulus: operator.modulus(),
        max_ratio,
        pairs: pairs.len() - skipped,
        skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleEstimate {
    pub level: Level,
    /// `(state, goal)` for the high level, `(low state index, action)` for the low level.
    pub coordinate: (usize, usize),
    pub mean: f64,
    pub stderr: f64,
    pub second_moment: f64,
    pub samples: usize,
}

impl MartingaleEstimate {
    /// `|mean| < k * stderr`, or an exact zero when every draw was identical.
    pub fn is_zero_mean(&self, k: f64) -> bool {
        if self.stderr == 0.0 {
            self.mean.abs() < 1e-12
        } else {
            self.mean.abs() < k * self.stderr
        }
    }
}

/// Draws `samples` realizations of the noise term at one coordinate.
///
/// Low level: `M1 = gamma^l (max_a' x(s^l', a') - E[max_a' x(s^l', a')])` with
/// `s^l'` drawn from the low-level kernel of `pi^h(y)`.
/// High level: `M2 = R + (gamma^h)^T max_w' y(s_T, w') - r^h(s, w) -
/// (gamma^h)^T E[max_w' y(s_T, w')]` with `R` the sampled discounted epoch
/// reward under `pi^l(x)`.
pub fn martingale_mean_estimate(
    context: &MeanFieldContext<'_>,
    pair: &QTablePair,
    level: Level,
    coordinate: (usize, usize),
    samples: usize,
    rng: &mut RngStream,
) -> Result<MartingaleEstimate> {
    if samples < 100 {
        return Err(Error::Domain(format!("need at least 100 samples, got {samples}")));
    }
    let problem = context.problem();
    pair.check(problem)?;
    let (x, y) = (&pair.low, &pair.high);
    let (i, j) = coordinate;
    let mut draw: Box<dyn FnMut(&mut RngStream) -> f64> = match level {
        Level::Low => {
            crate::error::check_index("low state", i, problem.num_low_states())?;
            crate::error::check_index("action", j, problem.num_actions())?;
            let model = context.low_model(y)?;
            let expected = model.expected_next_max(x, i, j);
            let space = problem.low_space();
            let ls = space.state(i);
            let high_policy = model.high_policy().clone();
            let gamma = problem.gamma_low();
            let t = problem.epoch_length();
            Box::new(move |rng: &mut RngStream| {
                let s_next = rng.categorical(problem.flat().row(ls.base, j));
                let next = if ls.clock + 1 < t {
                    space.index_of(s_next, ls.goal, ls.clock + 1)
                } else {
                    space.index_of(s_next, rng.categorical(high_policy.row(s_next)), 0)
                };
                gamma * (x.row_max(next) - expected)
            })
        }
        Level::High => {
            crate::error::check_index("state", i, problem.num_states())?;
            crate::error::check_index("goal", j, problem.num_goals())?;
            let model = context.high_model(x)?;
            let low_policy = context.low_policy(x);
            let expected = model.reward.get(i, j) + model.discount * model.expected_next_max(y, i, j);
            let discount = model.discount;
            Box::new(move |rng: &mut RngStream| {
                let ep = sample_epoch(problem, &low_policy, i, j, rng);
                ep.discounted_reward + discount * y.row_max(ep.terminal) - expected
            })
        }
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let m = draw(rng);
        sum += m;
        sum_sq += m * m;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MartingaleEstimate {
        level,
        coordinate,
        mean,
        stderr: (var / n).sqrt(),
        second_moment: sum_sq / n,
        samples,
    })
}

/// Smallest `K` with `E[M^2] <= K (1 + ||x||_2^2 + ||y||_2^2)` on the probed points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentFit {
    pub k: f64,
    /// `(||x||_2^2, ||y||_2^2, E[M^2])` per probe.
    pub points: Vec<(f64, f64, f64)>,
}

pub fn fit_second_moment_constant(points: &[(f64, f64, f64)]) -> SecondMomentFit {
    let k = points
        .iter()
        .map(|&(x2, y2, m2)| m2 / (1.0 + x2 + y2))
        .fold(0.0, f64::max);
    SecondMomentFit {
        k,
        points: points.to_vec(),
    }
}

pub fn squared_two_norm(t: &Table) -> f64 {
    t.as_slice().iter().map(|v| v * v).sum()
}

/// Which mean field a probe evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    /// `h(x, y)`, the low-level Bellman error.
    H,
    /// `g(x, y)`, the high-level Bellman error.
    G,
}

pub fn evaluate_field(field: Field, context: &MeanFieldContext<'_>, pair: &QTablePair) -> Result<Table> {
    match field {
        Field::H => context.h(&pair.low, &pair.high),
        Field::G => context.g(&pair.low, &pair.high),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledFieldGap {
    pub field: Field,
    pub c: f64,
    /// `sup_grid ||f_c - f_inf||`.
    pub gap: f64,
    /// `r_bar / c` for the level's reward.
    pub reward_term: f64,
    /// Largest policy-mismatch term over the grid.
    pub policy_term: f64,
}

impl ScaledFieldGap {
    pub fn bound(&self, reward_factor: f64) -> f64 {
        reward_factor * self.reward_term + self.policy_term
    }
}

fn l1_rows_max(a: &Table, b: &Table) -> f64 {
    (0..a.rows())
        .map(|r| a.row(r).iter().zip(b.row(r)).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Compares `f_c(x, y) = f(cx, cy) / c` with its limit `f_inf`, which drops the
/// reward and uses greedy policies.
///
/// For `h` the policy term is `gamma^l ||x|| max_s ||pi^h_c - pi^h_inf||_1`;
/// for `g` it is `(gamma^h)^T ||y|| T max_{s^l} ||pi^l_c - pi^l_inf||_1`.
pub fn scaled_field_gap(
    context: &MeanFieldContext<'_>,
    field: Field,
    c: f64,
    grid: &[QTablePair],
) -> Result<ScaledFieldGap> {
    if grid.is_empty() {
        return Err(Error::Domain("scaled-field grid is empty".into()));
    }
    if !(c >= 1.0) {
        return Err(Error::Domain(format!("scale must be >= 1, got {c}")));
    }
    let problem = context.problem();
    let mut gap: f64 = 0.0;
    let mut policy_term: f64 = 0.0;
    for pair in grid {
        pair.check(problem)?;
        let (x, y) = (&pair.low, &pair.high);
        let (xc, yc) = (x.scaled(c), y.scaled(c));
        match field {
            Field::H => {
                let hc = context.h(&xc, &yc)?.scaled(1.0 / c);
                let limit = LowLevelModel::new(problem, greedy_policy(y))?;
                let cont = limit.expected_next_max_table(x);
                let gamma = problem.gamma_low();
                let hinf = cont.zip_map(x, |e, v| gamma * e - v);
                gap = gap.max(hc.sup_distance(&hinf));
                let pc = context.high_policy(&yc);
                policy_term = policy_term.max(gamma * x.max_abs() * l1_rows_max(&pc, &greedy_policy(y)));
            }
            Field::G => {
                let gc = context.g(&xc, &yc)?.scaled(1.0 / c);
                let greedy_ctx = MeanFieldContext::with_extractors(
                    problem,
                    PolicyExtractor::Greedy,
                    PolicyExtractor::Greedy,
                );
                let model = greedy_ctx.high_model(x)?;
                let ginf = Table::from_fn(y.rows(), y.cols(), |s, g| {
                    model.discount * model.expected_next_max(y, s, g) - y.get(s, g)
                });
                gap = gap.max(gc.sup_distance(&ginf));
                let pc = context.low_policy(&xc);
                let t = problem.epoch_length() as f64;
                policy_term = policy_term
                    .max(model.discount * y.max_abs() * t * l1_rows_max(&pc, &greedy_policy(x)));
            }
        }
    }
    let reward_bound = match field {
        Field::H => problem.low_reward_bound(),
        Field::G => problem.high_reward_bound(),
    };
    Ok(ScaledFieldGap {
        field,
        c,
        gap,
        reward_term: reward_bound / c,
        policy_term,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Empirical lower bound on the Lipschitz constant.
    pub max_ratio: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// `max ||f(p1) - f(p2)|| / ||p1 - p2||` over the pairs, skipping identical inputs.
pub fn estimate_lipschitz(
    field: Field,
    context: &MeanFieldContext<'_>,
    pairs: &[(QTablePair, QTablePair)],
) -> Result<LipschitzEstimate> {
    if pairs.len() < 2 {
        return Err(Error::Domain("need at least 2 input pairs".into()));
    }
    let mut max_ratio: f64 = 0.0;
    let mut skipped = 0;
    for (p1, p2) in pairs {
        let d = p1.sup_distance(p2);
        if d == 0.0 {
            skipped += 1;
            continue;
        }
        let f1 = evaluate_field(field, context, p1)?;
        let f2 = evaluate_field(field, context, p2)?;
        max_ratio = max_ratio.max(f1.sup_distance(&f2) / d);
    }
    Ok(LipschitzEstimate {
        max_ratio,
        evaluated: pairs.len() - skipped,
        skipped,
    })
}

/// Finite-difference probe of `y -> lambda(y)` around `y`.
pub fn lambda_lipschitz_probe(
    context: &MeanFieldContext<'_>,
    y: &Table,
    directions: usize,
    delta: f64,
    tol: f64,
    rng: &mut RngStream,
) -> Result<LipschitzEstimate> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let base = context.lambda(y, tol)?;
    let mut max_ratio: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..directions {
        let u = random_table(y.rows(), y.cols(), delta, rng);
        let d = u.max_abs();
        if d == 0.0 {
            skipped += 1;
            continue;
        }
        let moved = context.lambda(&y.zip_map(&u, |a, b| a + b), tol)?;
        max_ratio = max_ratio.max(moved.sup_distance(&base) / d);
    }
    Ok(LipschitzEstimate {
        max_ratio,
        evaluated: directions - skipped,
        skipped,
    })
}
