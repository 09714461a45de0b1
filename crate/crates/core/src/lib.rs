//! Tabular Feudal Q-learning: a two-level learner on finite MDPs, the exact
//! Bellman machinery needed to check it, and a small experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envs;
pub mod equilibrium;
pub mod error;
pub mod feudal;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod qlearning;
pub mod rng;
pub mod table;

pub use error::{Error, Result};
pub use feudal::{FeudalProblem, LowState};
pub use mdp::FlatMdp;
pub use qlearning::{QTablePair, TrainingConfig};
pub use rng::RngStream;
pub use table::{Kernel, Table};
