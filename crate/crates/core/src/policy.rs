//! Policy extraction: Boltzmann exploration, GLIE temperature schedules,
//! greedy selection and visit counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

/// Row-sum tolerance for policy tables.
pub const POLICY_ROW_TOLERANCE: f64 = 1e-9;

/// Checks shape, non-negativity and row sums of a policy table.
pub fn check_stochastic(policy: &Table, rows: usize, cols: usize, what: &str) -> Result<()> {
    policy.expect_shape(rows, cols, what)?;
    for r in 0..rows {
        let row = policy.row(r);
        if row.iter().any(|p| !(0.0..=1.0 + POLICY_ROW_TOLERANCE).contains(p)) {
            return Err(Error::Domain(format!("{what}: row {r} has an entry outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > POLICY_ROW_TOLERANCE {
            return Err(Error::Domain(format!("{what}: row {r} sums to {sum}")));
        }
    }
    Ok(())
}

/// Softmax of `q_row / temperature`, computed from `q - max(q)` for overflow safety.
pub fn boltzmann_probs(q_row: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    if q_row.is_empty() {
        return Err(Error::Domain("empty Q row".into()));
    }
    if q_row.iter().any(|q| !q.is_finite()) {
        return Err(Error::Domain("Q row has non-finite entries".into()));
    }
    let mut out = vec![0.0; q_row.len()];
    boltzmann_probs_into(q_row, temperature, &mut out);
    Ok(out)
}

/// Unchecked [`boltzmann_probs`] writing into `out`.
#[inline]
pub fn boltzmann_probs_into(q_row: &[f64], temperature: f64, out: &mut [f64]) {
    let m = q_row.iter().fold(f64::NEG_INFINITY, |m, &q| m.max(q));
    let mut z = 0.0;
    for (o, &q) in out.iter_mut().zip(q_row) {
        *o = ((q - m) / temperature).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Shape of `tau(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TemperatureDecay {
    /// `tau0 / ln(n + 2)`
    Logarithmic,
    /// `tau0 * rate^n`. Not GLIE in general.
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannSchedule {
    pub initial_temperature: f64,
    pub decay: TemperatureDecay,
    /// Zero keeps the schedule GLIE.
    pub floor: f64,
}

impl Default for BoltzmannSchedule {
    fn default() -> Self {
        Self {
            initial_temperature: 1.0,
            decay: TemperatureDecay::Logarithmic,
            floor: 0.0,
        }
    }
}

impl BoltzmannSchedule {
    pub fn new(initial_temperature: f64, decay: TemperatureDecay, floor: f64) -> Result<Self> {
        let s = Self {
            initial_temperature,
            decay,
            floor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn logarithmic(initial_temperature: f64) -> Self {
        Self {
            initial_temperature,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return Err(Error::Domain(format!(
                "initial temperature must be positive, got {}",
                self.initial_temperature
            )));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::Domain(format!("temperature floor must be >= 0, got {}", self.floor)));
        }
        if let TemperatureDecay::Exponential { rate } = self.decay {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::Domain(format!("decay rate must be in (0, 1), got {rate}")));
            }
        }
        Ok(())
    }

    pub fn is_glie(&self) -> bool {
        self.floor == 0.0 && matches!(self.decay, TemperatureDecay::Logarithmic)
    }

    /// `tau(n)`, clamped below by the floor and kept strictly positive.
    pub fn temperature(&self, n: u64) -> f64 {
        let raw = match self.decay {
            TemperatureDecay::Logarithmic => self.initial_temperature / ((n as f64) + 2.0).ln(),
            TemperatureDecay::Exponential { rate } => {
                self.initial_temperature * rate.powf(n as f64)
            }
        };
        raw.max(self.floor).max(f64::MIN_POSITIVE)
    }
}

pub fn glie_temperature(schedule: &BoltzmannSchedule, n: u64) -> f64 {
    schedule.temperature(n)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

/// Index of the row maximum.
pub fn greedy_action(q_row: &[f64], tie_break: TieBreak) -> usize {
    let mut best = 0;
    for (i, &q) in q_row.iter().enumerate().skip(1) {
        let better = match tie_break {
            TieBreak::LowestIndex => q > q_row[best],
            TieBreak::HighestIndex => q >= q_row[best],
        };
        if better {
            best = i;
        }
    }
    best
}

#[inline]
pub fn argmax(q_row: &[f64]) -> usize {
    greedy_action(q_row, TieBreak::LowestIndex)
}

/// Greedy indices of every row.
pub fn greedy_indices(q: &Table) -> Vec<usize> {
    (0..q.rows()).map(|r| argmax(q.row(r))).collect()
}

/// One-hot policy table from row argmaxes.
pub fn greedy_policy(q: &Table) -> Table {
    one_hot_policy(&greedy_indices(q), q.cols())
}

pub fn one_hot_policy(choices: &[usize], cols: usize) -> Table {
    let mut t = Table::zeros(choices.len(), cols);
    for (r, &c) in choices.iter().enumerate() {
        t.set(r, c, 1.0);
    }
    t
}

pub fn uniform_policy(rows: usize, cols: usize) -> Table {
    Table::filled(rows, cols, 1.0 / cols as f64)
}

/// Row-wise Boltzmann policy table.
pub fn boltzmann_policy(q: &Table, temperature: f64) -> Result<Table> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
    }
    let mut out = Table::zeros(q.rows(), q.cols());
    for r in 0..q.rows() {
        boltzmann_probs_into(q.row(r), temperature, out.row_mut(r));
    }
    Ok(out)
}

/// A map from a Q-table to a policy table, `F` in the two-timescale analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyExtractor {
    Greedy,
    Boltzmann { temperature: f64 },
}

impl PolicyExtractor {
    pub fn extract(&self, q: &Table) -> Table {
        match *self {
            PolicyExtractor::Greedy => greedy_policy(q),
            PolicyExtractor::Boltzmann { temperature } => {
                let mut out = Table::zeros(q.rows(), q.cols());
                for r in 0..q.rows() {
                    boltzmann_probs_into(q.row(r), temperature, out.row_mut(r));
                }
                out
            }
        }
    }

    pub fn is_greedy(&self) -> bool {
        matches!(self, PolicyExtractor::Greedy)
    }
}

/// Visit counts `n(s, a)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitCounter {
    cols: usize,
    counts: Vec<u64>,
    total: u64,
}

impl VisitCounter {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            counts: vec![0; rows * cols],
            total: 0,
        }
    }

    #[inline]
    pub fn record(&mut self, state: usize, action: usize) -> u64 {
        let c = &mut self.counts[state * self.cols + action];
        *c += 1;
        self.total += 1;
        *c
    }

    #[inline]
    pub fn count(&self, state: usize, action: usize) -> u64 {
        self.counts[state * self.cols + action]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn min_count(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.total = 0;
    }
}

/// Result of scaling a grid of Q-tables and watching `F(cQ)` settle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompactConvergenceProbe {
    pub scales: Vec<f64>,
    /// `sup_grid ||F(c_k Q) - F(c_{k+1} Q)||` for consecutive scales.
    pub successive_gaps: Vec<f64>,
    /// `sup_grid ||F(c_k Q) - greedy(Q)||` per scale.
    pub limit_gaps: Vec<f64>,
}

impl CompactConvergenceProbe {
    /// True when the successive gaps shrink, the numerical Cauchy signature.
    pub fn is_cauchy(&self) -> bool {
        self.successive_gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12)
    }
}

/// Scales every grid table by each `c` and compares Boltzmann policies at the
/// fixed temperature.
pub fn compact_convergence_probe(
    grid: &[Table],
    scales: &[f64],
    temperature: f64,
) -> Result<CompactConvergenceProbe> {
    if grid.is_empty() || scales.is_empty() {
        return Err(Error::Domain("probe needs a non-empty grid and scale list".into()));
    }
    let policies: Vec<Vec<Table>> = scales
        .iter()
        .map(|&c| {
            grid.iter()
                .map(|q| boltzmann_policy(&q.scaled(c), temperature))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let limits: Vec<Table> = grid.iter().map(greedy_policy).collect();
    let sup = |a: &[Table], b: &[Table]| {
        a.iter().zip(b).map(|(x, y)| x.sup_distance(y)).fold(0.0, f64::max)
    };
    Ok(CompactConvergenceProbe {
        scales: scales.to_vec(),
        successive_gaps: policies.windows(2).map(|w| sup(&w[0], &w[1])).collect(),
        limit_gaps: policies.iter().map(|p| sup(p, &limits)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boltzmann_uniform_on_constant_row() {
        let p = boltzmann_probs(&[3.0, 3.0, 3.0, 3.0], 0.7).unwrap();
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn boltzmann_two_actions() {
        let p = boltzmann_probs(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.73106).abs() < 1e-5);
        assert!((p[1] - 0.26894).abs() < 1e-5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boltzmann_tiny_temperature_no_overflow() {
        let p = boltzmann_probs(&[1.0, 0.0], 1e-6).unwrap();
        assert!(p[0] > 1.0 - 1e-9);
        assert!(p.iter().all(|x| x.is_finite()));
        let p = boltzmann_probs(&[1e300, -1e300], 1e-300).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn boltzmann_rejects_bad_temperature() {
        assert!(matches!(boltzmann_probs(&[1.0], 0.0), Err(Error::Domain(_))));
        assert!(boltzmann_probs(&[1.0], -1.0).is_err());
        assert!(boltzmann_probs(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn glie_values() {
        let s = BoltzmannSchedule::logarithmic(1.0);
        assert!((glie_temperature(&s, 0) - 1.0 / 2f64.ln()).abs() < 1e-12);
        let floored = BoltzmannSchedule::new(0.1, TemperatureDecay::Logarithmic, 0.01).unwrap();
        assert_eq!(glie_temperature(&floored, u64::MAX / 2), 0.01);
        let e = BoltzmannSchedule::new(2.0, TemperatureDecay::Exponential { rate: 0.5 }, 0.0).unwrap();
        assert_eq!(e.temperature(3), 0.25);
        assert!(!e.is_glie());
    }

    #[test]
    fn glie_monotone() {
        for s in [
            BoltzmannSchedule::logarithmic(3.0),
            BoltzmannSchedule::new(1.0, TemperatureDecay::Exponential { rate: 0.99 }, 1e-3).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for n in (0..100_000).step_by(97) {
                let t = s.temperature(n);
                assert!(t > 0.0 && t <= prev);
                prev = t;
            }
        }
    }

    #[test]
    fn greedy_cases() {
        assert_eq!(greedy_action(&[3.0, 1.0, 2.0], TieBreak::LowestIndex), 0);
        assert_eq!(greedy_action(&[5.0, 5.0, 1.0], TieBreak::LowestIndex), 0);
        assert_eq!(greedy_action(&[5.0, 5.0, 1.0], TieBreak::HighestIndex), 1);
        assert_eq!(greedy_action(&[-1.0], TieBreak::LowestIndex), 0);
    }

    #[test]
    fn visit_counter_totals() {
        let mut c = VisitCounter::new(2, 3);
        c.record(0, 1);
        c.record(0, 1);
        c.record(1, 2);
        assert_eq!(c.count(0, 1), 2);
        assert_eq!(c.total(), 3);
        assert_eq!(c.min_count(), 0);
    }

    #[test]
    fn probe_on_tie_free_grid_is_cauchy() {
        let grid = vec![
            Table::from_rows(vec![vec![1.0, 0.0, 0.5], vec![-0.2, 0.3, 0.1]]).unwrap(),
            Table::from_rows(vec![vec![0.0, 2.0, 1.0], vec![0.7, 0.3, 0.0]]).unwrap(),
        ];
        let probe = compact_convergence_probe(&grid, &[1.0, 10.0, 100.0, 1000.0], 1.0).unwrap();
        assert!(probe.is_cauchy());
        assert!(*probe.limit_gaps.last().unwrap() < 1e-12);
    }

    #[test]
    fn stochastic_check() {
        assert!(check_stochastic(&uniform_policy(3, 4), 3, 4, "p").is_ok());
        assert!(check_stochastic(&Table::filled(3, 4, 0.3), 3, 4, "p").is_err());
        assert!(check_stochastic(&uniform_policy(3, 4), 3, 3, "p").is_err());
    }
}
