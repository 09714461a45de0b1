use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::bellman::{solve_fixed_point, BellmanOperator, HighLevelModel, LowLevelModel};
use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::policy::{greedy_indices, PolicyExtractor};
use crate::qlearning::{high_table_bound, low_table_bound, QTablePair};
use crate::table::Table;

/// Where a level's policy comes from when evaluating the mean fields.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySource {
    /// Extracted from the current table, so it moves with the iterate.
    Extract(PolicyExtractor),
    /// Frozen policy table.
    Fixed(Table),
}

/// The ingredients of the mean fields
/// `h(x, y) = T^l_{pi^h(y)} x - x` and `g(x, y) = T^h_{pi^l(x)} y - y`.
///
/// High-level compositions are cached by the greedy fingerprint of the low
/// table when the low policy is greedy, and once when it is fixed.
#[derive(Debug)]
pub struct MeanFieldContext<'a> {
    problem: &'a FeudalProblem,
    high: PolicySource,
    low: PolicySource,
    cache: Mutex<HashMap<Vec<usize>, Arc<HighLevelModel>>>,
}

impl<'a> MeanFieldContext<'a> {
    pub fn new(problem: &'a FeudalProblem, high: PolicySource, low: PolicySource) -> Result<Self> {
        if let PolicySource::Fixed(t) = &high {
            crate::policy::check_stochastic(t, problem.num_states(), problem.num_goals(), "fixed high-level policy")?;
        }
        if let PolicySource::Fixed(t) = &low {
            crate::policy::check_stochastic(t, problem.num_low_states(), problem.num_actions(), "fixed low-level policy")?;
        }
        Ok(Self {
            problem,
            high,
            low,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Both levels greedy with lowest-index tie-break.
    pub fn greedy(problem: &'a FeudalProblem) -> Self {
        Self::with_extractors(problem, PolicyExtractor::Greedy, PolicyExtractor::Greedy)
    }

    pub fn with_extractors(
        problem: &'a FeudalProblem,
        high: PolicyExtractor,
        low: PolicyExtractor,
    ) -> Self {
        Self {
            problem,
            high: PolicySource::Extract(high),
            low: PolicySource::Extract(low),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn problem(&self) -> &'a FeudalProblem {
        self.problem
    }

    pub fn high_source(&self) -> &PolicySource {
        &self.high
    }

    pub fn low_source(&self) -> &PolicySource {
        &self.low
    }

    /// `pi^h` induced by the high table `y`.
    pub fn high_policy(&self, y: &Table) -> Table {
        match &self.high {
            PolicySource::Extract(e) => e.extract(y),
            PolicySource::Fixed(t) => t.clone(),
        }
    }

    /// `pi^l` induced by the low table `x`.
    pub fn low_policy(&self, x: &Table) -> Table {
        match &self.low {
            PolicySource::Extract(e) => e.extract(x),
            PolicySource::Fixed(t) => t.clone(),
        }
    }

    pub fn high_model(&self, x: &Table) -> Result<Arc<HighLevelModel>> {
        let key = match &self.low {
            PolicySource::Extract(PolicyExtractor::Greedy) => Some(greedy_indices(x)),
            PolicySource::Fixed(_) => Some(Vec::new()),
            PolicySource::Extract(_) => None,
        };
        if let Some(key) = key {
            if let Some(m) = self.cache.lock().expect("cache lock").get(&key) {
                return Ok(Arc::clone(m));
            }
            let model = Arc::new(HighLevelModel::compose(self.problem, &self.low_policy(x))?);
            self.cache
                .lock()
                .expect("cache lock")
                .insert(key, Arc::clone(&model));
            Ok(model)
        } else {
            Ok(Arc::new(HighLevelModel::compose(self.problem, &self.low_policy(x))?))
        }
    }

    pub fn low_model(&self, y: &Table) -> Result<LowLevelModel<'a>> {
        LowLevelModel::new(self.problem, self.high_policy(y))
    }

    /// Number of cached high-level compositions.
    pub fn cached_models(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// `h(x, y) = T^l_{pi^h(y)} x - x`.
    pub fn h(&self, x: &Table, y: &Table) -> Result<Table> {
        let model = self.low_model(y)?;
        Ok(model.apply(x).zip_map(x, |a, b| a - b))
    }

    /// `g(x, y) = T^h_{pi^l(x)} y - y`.
    pub fn g(&self, x: &Table, y: &Table) -> Result<Table> {
        let model = self.high_model(x)?;
        Ok(model.apply(y).zip_map(y, |a, b| a - b))
    }

    /// `lambda(y)`: the low-level fixed point for the policy induced by `y`.
    pub fn lambda(&self, y: &Table, tol: f64) -> Result<Table> {
        let model = self.low_model(y)?;
        let init = Table::zeros(self.problem.num_low_states(), self.problem.num_actions());
        Ok(solve_fixed_point(&model, &init, tol)?.table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    /// Euler step.
    pub step: f64,
    pub horizon: f64,
    /// Fast/slow ratio; the fast component moves at `1 / epsilon`.
    pub epsilon: f64,
    /// Recorded points along the trajectory, endpoints included.
    pub samples: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            horizon: 200.0,
            epsilon: 0.01,
            samples: 101,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step < self.horizon) {
            return Err(Error::Domain(format!(
                "need 0 < step < horizon, got step {} horizon {}",
                self.step, self.horizon
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn num_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }

    fn record_every(&self) -> usize {
        let n = self.num_steps();
        if self.samples <= 1 {
            n.max(1)
        } else {
            (n / (self.samples - 1)).max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<QTablePair>,
}

impl OdeTrajectory {
    pub fn terminal(&self) -> &QTablePair {
        self.states.last().expect("trajectory has at least the initial point")
    }
}

fn divergence_check(time: f64, norm: f64, limit: f64) -> Result<()> {
    if norm.is_finite() && norm <= limit {
        Ok(())
    } else {
        Err(Error::Instability { time, norm, limit })
    }
}

/// Forward Euler on `x' = h(x, y) / epsilon`, `y' = g(x, y)`, with policies
/// re-extracted from the current tables at every step.
pub fn integrate_mean_field_odes(
    context: &MeanFieldContext<'_>,
    x0: &Table,
    y0: &Table,
    ode: &OdeConfig,
) -> Result<OdeTrajectory> {
    ode.validate()?;
    let problem = context.problem();
    let start = QTablePair {
        high: y0.clone(),
        low: x0.clone(),
    };
    start.check(problem)?;
    let low_limit = 10.0 * low_table_bound(problem, x0.max_abs());
    let high_limit = 10.0 * high_table_bound(problem, y0.max_abs());
    let mut x = x0.clone();
    let mut y = y0.clone();
    let fast = ode.step / ode.epsilon;
    let every = ode.record_every();
    let mut out = OdeTrajectory {
        times: vec![0.0],
        states: vec![start],
    };
    let steps = ode.num_steps();
    for k in 1..=steps {
        let hx = context.h(&x, &y)?;
        let gy = context.g(&x, &y)?;
        x = x.zip_map(&hx, |a, d| a + fast * d);
        y = y.zip_map(&gy, |a, d| a + ode.step * d);
        let t = k as f64 * ode.step;
        divergence_check(t, x.max_abs(), low_limit)?;
        divergence_check(t, y.max_abs(), high_limit)?;
        if k % every == 0 || k == steps {
            out.times.push(t);
            out.states.push(QTablePair {
                high: y.clone(),
                low: x.clone(),
            });
        }
    }
    Ok(out)
}

/// Forward Euler on the fast system `x' = h(x, y) / epsilon` with `y` frozen.
pub fn integrate_fast_ode(
    context: &MeanFieldContext<'_>,
    x0: &Table,
    y: &Table,
    ode: &OdeConfig,
) -> Result<OdeTrajectory> {
    ode.validate()?;
    let problem = context.problem();
    let start = QTablePair {
        high: y.clone(),
        low: x0.clone(),
    };
    start.check(problem)?;
    let limit = 10.0 * low_table_bound(problem, x0.max_abs());
    let model = context.low_model(y)?;
    let fast = ode.step / ode.epsilon;
    let every = ode.record_every();
    let mut x = x0.clone();
    let mut out = OdeTrajectory {
        times: vec![0.0],
        states: vec![start],
    };
    let steps = ode.num_steps();
    for k in 1..=steps {
        let tx = model.apply(&x);
        x = x.zip_map(&tx, |a, b| a + fast * (b - a));
        let t = k as f64 * ode.step;
        divergence_check(t, x.max_abs(), limit)?;
        if k % every == 0 || k == steps {
            out.times.push(t);
            out.states.push(QTablePair {
                high: y.clone(),
                low: x.clone(),
            });
        }
    }
    Ok(out)
}
