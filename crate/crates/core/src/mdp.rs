//! Finite MDPs `<S, A, P, r, gamma>` with dense storage.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::rng::RngStream;
use crate::table::{Kernel, Table};

/// Row-sum tolerance applied on load.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A finite MDP with dense transition tensor `P[s][a][s']` and reward table `r[s][a]`.
///
/// Values built through [`FlatMdp::new`] or loaded from JSON are validated;
/// [`FlatMdp::unchecked`] exists so that [`validate_flat_mdp`] can report on
/// arbitrary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatMdpDocument", into = "FlatMdpDocument")]
pub struct FlatMdp {
    transition: Kernel,
    reward: Table,
    discount: f64,
    reward_bound: f64,
}

/// On-disk JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatMdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Kernel,
    pub reward: Table,
    pub discount: f64,
}

impl FlatMdp {
    pub fn new(transition: Kernel, reward: Table, discount: f64) -> Result<Self> {
        let mdp = Self::unchecked(transition, reward, discount);
        let report = validate_flat_mdp(&mdp);
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidModel(report.to_string()))
        }
    }

    /// Builds without validation. Use [`validate_flat_mdp`] before relying on it.
    pub fn unchecked(transition: Kernel, reward: Table, discount: f64) -> Self {
        let reward_bound = reward.max_abs();
        Self {
            transition,
            reward,
            discount,
            reward_bound,
        }
    }

    pub fn num_states(&self) -> usize {
        self.transition.num_from()
    }

    pub fn num_actions(&self) -> usize {
        self.transition.num_actions()
    }

    pub fn transition(&self) -> &Kernel {
        &self.transition
    }

    pub fn reward_table(&self) -> &Table {
        &self.reward
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition.get(s, a, next)
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        self.transition.row(s, a)
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward.get(s, a)
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// The stored bound `r_bar >= |r(s, a)|`.
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    /// Every row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        (0..self.num_states()).all(|s| {
            (0..self.num_actions()).all(|a| self.row(s, a).contains(&1.0))
        })
    }

    /// Rescales every row to sum to one. Only applied when explicitly requested.
    pub fn renormalized(&self) -> Result<Self> {
        let mut transition = self.transition.clone();
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                let row = transition.row_mut(s, a);
                let sum: f64 = row.iter().sum();
                if !(sum > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "row ({s}, {a}) has no mass to renormalize"
                    )));
                }
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Self::new(transition, self.reward.clone(), self.discount)
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

impl TryFrom<FlatMdpDocument> for FlatMdp {
    type Error = Error;

    fn try_from(doc: FlatMdpDocument) -> Result<Self> {
        if doc.transition.num_from() != doc.num_states
            || doc.transition.num_actions() != doc.num_actions
        {
            return Err(Error::Shape(format!(
                "transition is {}x{}x{}, header says {} states and {} actions",
                doc.transition.num_from(),
                doc.transition.num_actions(),
                doc.transition.num_to(),
                doc.num_states,
                doc.num_actions
            )));
        }
        FlatMdp::new(doc.transition, doc.reward, doc.discount)
    }
}

impl From<FlatMdp> for FlatMdpDocument {
    fn from(m: FlatMdp) -> Self {
        Self {
            num_states: m.num_states(),
            num_actions: m.num_actions(),
            transition: m.transition,
            reward: m.reward,
            discount: m.discount,
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ValidationIssue {
    EmptySpace { num_states: usize, num_actions: usize },
    ShapeMismatch(String),
    RowSum { state: usize, action: usize, sum: f64, deficit: f64 },
    ProbabilityOutOfRange { state: usize, action: usize, next: usize, value: f64 },
    NonFiniteReward { state: usize, action: usize, value: f64 },
    DiscountOutOfRange(f64),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySpace { num_states, num_actions } => {
                write!(f, "empty space: {num_states} states, {num_actions} actions")
            }
            Self::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Self::RowSum { state, action, sum, deficit } => write!(
                f,
                "row (s={state}, a={action}) sums to {sum} (deficit {deficit:.3e})"
            ),
            Self::ProbabilityOutOfRange { state, action, next, value } => write!(
                f,
                "P({next} | {state}, {action}) = {value} outside [0, 1]"
            ),
            Self::NonFiniteReward { state, action, value } => {
                write!(f, "non-finite reward r({state}, {action}) = {value}")
            }
            Self::DiscountOutOfRange(g) => write!(f, "discount {g} outside (0, 1)"),
        }
    }
}

/// Every violated invariant of a [`FlatMdp`]; empty iff the MDP is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "valid");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

pub fn validate_flat_mdp(mdp: &FlatMdp) -> ValidationReport {
    let mut issues = Vec::new();
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if ns == 0 || na == 0 {
        issues.push(ValidationIssue::EmptySpace {
            num_states: ns,
            num_actions: na,
        });
        return ValidationReport { issues };
    }
    if mdp.transition.num_to() != ns {
        issues.push(ValidationIssue::ShapeMismatch(format!(
            "transition targets {} states, expected {ns}",
            mdp.transition.num_to()
        )));
    }
    if mdp.reward.shape() != (ns, na) {
        issues.push(ValidationIssue::ShapeMismatch(format!(
            "reward is {}x{}, expected {ns}x{na}",
            mdp.reward.rows(),
            mdp.reward.cols()
        )));
    }
    if !issues.is_empty() {
        return ValidationReport { issues };
    }
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.row(s, a);
            for (next, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    issues.push(ValidationIssue::ProbabilityOutOfRange {
                        state: s,
                        action: a,
                        next,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                issues.push(ValidationIssue::RowSum {
                    state: s,
                    action: a,
                    sum,
                    deficit: 1.0 - sum,
                });
            }
            let r = mdp.reward(s, a);
            if !r.is_finite() {
                issues.push(ValidationIssue::NonFiniteReward {
                    state: s,
                    action: a,
                    value: r,
                });
            }
        }
    }
    if !(mdp.discount > 0.0 && mdp.discount < 1.0) {
        issues.push(ValidationIssue::DiscountOutOfRange(mdp.discount));
    }
    ValidationReport { issues }
}

/// A sampled step of the flat process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Draws `s' ~ P(. | s, a)` by inverse CDF over the row in index order.
pub fn sample_transition(
    mdp: &FlatMdp,
    state: usize,
    action: usize,
    rng: &mut RngStream,
) -> Result<Transition> {
    check_index("state", state, mdp.num_states())?;
    check_index("action", action, mdp.num_actions())?;
    Ok(sample_unchecked(mdp, state, action, rng))
}

#[inline]
pub(crate) fn sample_unchecked(
    mdp: &FlatMdp,
    state: usize,
    action: usize,
    rng: &mut RngStream,
) -> Transition {
    Transition {
        state,
        action,
        reward: mdp.reward(state, action),
        next_state: rng.categorical(mdp.row(state, action)),
    }
}
