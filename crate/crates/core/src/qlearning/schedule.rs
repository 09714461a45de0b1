use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial step sizes `alpha(n) = (n + n0)^-a`, `beta(n) = (n + n0)^-b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSizeSchedule {
    pub exponent_fast: f64,
    pub exponent_slow: f64,
    pub offset_fast: u64,
    pub offset_slow: u64,
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        Self {
            exponent_fast: 0.6,
            exponent_slow: 0.9,
            offset_fast: 1,
            offset_slow: 1,
        }
    }
}

impl StepSizeSchedule {
    pub fn new(exponent_fast: f64, exponent_slow: f64, offset: u64) -> Result<Self> {
        let s = Self {
            exponent_fast,
            exponent_slow,
            offset_fast: offset,
            offset_slow: offset,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks `0.5 < a < b <= 1` and positive offsets.
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.exponent_fast, self.exponent_slow);
        if !(a > 0.5 && a <= 1.0) || !(b > 0.5 && b <= 1.0) {
            return Err(Error::Domain(format!("exponents must lie in (0.5, 1], got a = {a}, b = {b}")));
        }
        if !(b > a) {
            return Err(Error::Domain(format!("slow exponent {b} must exceed fast exponent {a}")));
        }
        if self.offset_fast == 0 || self.offset_slow == 0 {
            return Err(Error::Domain("step-size offsets must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn alpha(&self, n: u64) -> f64 {
        ((n + self.offset_fast) as f64).powf(-self.exponent_fast)
    }

    #[inline]
    pub fn beta(&self, n: u64) -> f64 {
        ((n + self.offset_slow) as f64).powf(-self.exponent_slow)
    }
}

/// `(alpha(n), beta(n))`.
pub fn step_sizes(schedule: &StepSizeSchedule, n: u64) -> (f64, f64) {
    (schedule.alpha(n), schedule.beta(n))
}

/// What `n` counts in `alpha(n)` and `beta(n)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCounting {
    /// One counter per level, advanced by every update at that level.
    #[default]
    PerLevel,
    /// One counter per table entry, advanced when that entry is updated.
    PerEntry,
}

/// What `n` counts in the exploration temperature `tau(n)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperatureClock {
    /// Decisions taken so far at that level.
    #[default]
    PerLevel,
    /// Visits to the current state at that level.
    PerState,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_one() {
        let s = StepSizeSchedule::default();
        assert_eq!(step_sizes(&s, 0), (1.0, 1.0));
    }

    #[test]
    fn thousandth_step() {
        let (a, b) = step_sizes(&StepSizeSchedule::default(), 999);
        assert!((a - 1000f64.powf(-0.6)).abs() < 1e-15);
        assert!((a - 0.01585).abs() < 1e-5);
        assert!((b - 0.001995).abs() < 1e-6);
    }

    #[test]
    fn ratio_strictly_decreasing() {
        let s = StepSizeSchedule::default();
        let mut prev = f64::INFINITY;
        for n in 0..10_000 {
            let (a, b) = step_sizes(&s, n);
            let r = b / a;
            assert!(r < prev || n == 0);
            prev = r;
        }
    }

    #[test]
    fn validation() {
        assert!(StepSizeSchedule::new(0.6, 0.9, 1).is_ok());
        assert!(StepSizeSchedule::new(0.9, 0.6, 1).is_err());
        assert!(StepSizeSchedule::new(0.5, 0.9, 1).is_err());
        assert!(StepSizeSchedule::new(0.6, 1.1, 1).is_err());
        assert!(StepSizeSchedule::new(0.6, 0.9, 0).is_err());
    }
}
