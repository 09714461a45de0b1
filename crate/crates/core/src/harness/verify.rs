use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::envs::{flip_feudal, random_feudal, RandomFeudalSpec};
use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::oracle::{
    contraction_ratio, integrate_mean_field_odes, martingale_mean_estimate, random_pair,
    random_table, random_table_pairs, scaled_field_gap, solve_coupled, Field, HighLevelModel,
    Level, LowLevelModel, MeanFieldContext, OdeConfig,
};
use crate::policy::{boltzmann_policy, PolicyExtractor};
use crate::rng::RngStream;

pub const THREADS_ENV: &str = "FEUDALQ_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Contraction,
    Martingale,
    Scaled,
    Ode,
}

/// One checked quantity: `value <= bound` unless noted in the name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }

    fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            pass: value < bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Threads from `FEUDALQ_THREADS`, or rayon's default.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Flip instance plus random instances with `T <= 3`, `|S| <= 4`, `|A| <= 3`.
pub fn battery_instances(count: usize) -> Vec<(String, FeudalProblem)> {
    let mut out = vec![("flip".to_string(), flip_feudal())];
    for seed in 0..count as u64 {
        let spec = RandomFeudalSpec {
            num_states: 2 + (seed % 3) as usize,
            num_actions: 2 + (seed % 2) as usize,
            num_goals: 2 + (seed % 3) as usize,
            epoch_length: 1 + (seed % 3) as usize,
            sparsity: 0.3,
            ..Default::default()
        };
        out.push((format!("random{seed}"), random_feudal(&spec, seed)));
    }
    out
}

/// Largest ratio over `pairs` random table pairs for both operators, each
/// under a random Boltzmann partner policy.
pub fn contraction_checks(name: &str, problem: &FeudalProblem, pairs: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = RngStream::new(seed);
    let (ns, ng, nl, na) = (problem.num_states(), problem.num_goals(), problem.num_low_states(), problem.num_actions());
    let high_policy = boltzmann_policy(&random_table(ns, ng, 2.0, &mut rng), 0.5)?;
    let low_policy = boltzmann_policy(&random_table(nl, na, 2.0, &mut rng), 0.5)?;
    let low = LowLevelModel::new(problem, high_policy)?;
    let high = HighLevelModel::compose(problem, &low_policy)?;
    let est_low = contraction_ratio(&low, &random_table_pairs(nl, na, pairs, 10.0, &mut rng));
    let est_high = contraction_ratio(&high, &random_table_pairs(ns, ng, pairs, 10.0, &mut rng));
    Ok(vec![
        Check::at_most(format!("{name} low-level ratio"), est_low.max_ratio, est_low.modulus + 1e-10),
        Check::at_most(format!("{name} high-level ratio"), est_high.max_ratio, est_high.modulus + 1e-10),
    ])
}

/// `|mean| < 4 stderr` for every high coordinate and `low_coords` random low ones.
pub fn martingale_checks(
    name: &str,
    problem: &FeudalProblem,
    samples: usize,
    low_coords: usize,
    seed: u64,
) -> Result<Vec<Check>> {
    let ctx = MeanFieldContext::with_extractors(
        problem,
        PolicyExtractor::Boltzmann { temperature: 1.0 },
        PolicyExtractor::Boltzmann { temperature: 1.0 },
    );
    let mut rng = RngStream::new(seed);
    let pair = random_pair(problem, 2.0, &mut rng);
    let mut coords: Vec<(Level, (usize, usize))> = Vec::new();
    for s in 0..problem.num_states() {
        for g in 0..problem.num_goals() {
            coords.push((Level::High, (s, g)));
        }
    }
    for _ in 0..low_coords {
        coords.push((Level::Low, (rng.index(problem.num_low_states()), rng.index(problem.num_actions()))));
    }
    coords
        .into_par_iter()
        .enumerate()
        .map(|(k, (level, c))| {
            let mut r = RngStream::substream(seed, 100 + k as u64);
            let est = martingale_mean_estimate(&ctx, &pair, level, c, samples, &mut r)?;
            let tag = match level {
                Level::High => "M2",
                Level::Low => "M1",
            };
            let bound = 4.0 * est.stderr;
            Ok(Check {
                name: format!("{name} {tag} at {c:?} |mean|"),
                value: est.mean.abs(),
                bound,
                pass: est.is_zero_mean(4.0),
            })
        })
        .collect()
}

/// Scaled-field gaps over `grid_size` random pairs for `c` in `{1, 10, 100, 1000}`.
pub fn scaled_checks(
    name: &str,
    problem: &FeudalProblem,
    extractor: PolicyExtractor,
    grid_size: usize,
    seed: u64,
) -> Result<Vec<Check>> {
    let ctx = MeanFieldContext::with_extractors(problem, extractor, extractor);
    let mut rng = RngStream::new(seed);
    let grid: Vec<_> = (0..grid_size).map(|_| random_pair(problem, 3.0, &mut rng)).collect();
    let mut checks = Vec::new();
    for field in [Field::H, Field::G] {
        let tag = match field {
            Field::H => "h",
            Field::G => "g",
        };
        let mut prev = f64::INFINITY;
        for c in [1.0, 10.0, 100.0, 1000.0] {
            let gap = scaled_field_gap(&ctx, field, c, &grid)?;
            checks.push(Check::at_most(format!("{name} {tag}_c gap non-increasing at c={c}"), gap.gap, prev));
            checks.push(Check::below(format!("{name} {tag}_c gap at c={c}"), gap.gap, gap.bound(10.0)));
            prev = gap.gap;
        }
    }
    Ok(checks)
}

/// Euler runs from `starts` random pairs end within `tol` of `(lambda(y*), y*)`.
pub fn ode_checks(
    name: &str,
    problem: &FeudalProblem,
    ode: &OdeConfig,
    starts: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<Check>> {
    let sol = solve_coupled(problem, 1e-12)?;
    let ctx = MeanFieldContext::greedy(problem);
    let y_star = sol.pair.high.clone();
    let x_star = ctx.lambda(&y_star, 1e-12)?;
    let mut rng = RngStream::new(seed);
    let inits: Vec<_> = (0..starts).map(|_| random_pair(problem, 5.0, &mut rng)).collect();
    inits
        .into_par_iter()
        .enumerate()
        .map(|(k, init)| {
            let traj = integrate_mean_field_odes(&ctx, &init.low, &init.high, ode)?;
            let end = traj.terminal();
            let d = end.low.sup_distance(&x_star).max(end.high.sup_distance(&y_star));
            Ok(Check::at_most(format!("{name} start {k} terminal distance"), d, tol))
        })
        .collect()
}

/// Runs one battery on the flip instance and a few random ones.
pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let pool = thread_pool()?;
    pool.install(|| {
        let checks: Result<Vec<Vec<Check>>> = match suite {
            Suite::Contraction => battery_instances(10)
                .par_iter()
                .enumerate()
                .map(|(k, (name, p))| contraction_checks(name, p, 1000, k as u64))
                .collect(),
            Suite::Martingale => Ok(vec![martingale_checks("flip", &flip_feudal(), 100_000, 10, 11)?]),
            Suite::Scaled => battery_instances(3)
                .par_iter()
                .enumerate()
                .map(|(k, (name, p))| {
                    let mut c = scaled_checks(&format!("{name} greedy"), p, PolicyExtractor::Greedy, 20, k as u64)?;
                    c.extend(scaled_checks(
                        &format!("{name} boltzmann"),
                        p,
                        PolicyExtractor::Boltzmann { temperature: 1.0 },
                        20,
                        k as u64,
                    )?);
                    Ok(c)
                })
                .collect(),
            Suite::Ode => Ok(vec![ode_checks("flip", &flip_feudal(), &OdeConfig::default(), 5, 1e-3, 21)?]),
        };
        Ok(SuiteReport {
            suite,
            checks: checks?.into_iter().flatten().collect(),
        })
    })
}
