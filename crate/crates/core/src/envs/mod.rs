//! Concrete MDP instances.

mod four_rooms;
mod random;

pub use four_rooms::{
    GoalReward,
    build_four_rooms, Cell, FourRooms, FourRoomsConfig, GridState, Orientation, ACTION_FORWARD,
    ACTION_LEFT, ACTION_RIGHT,
};
pub use random::{random_feudal, random_mdp, RandomFeudalSpec, RandomLowReward};

use crate::feudal::{FeudalOptions, FeudalProblem};
use crate::mdp::FlatMdp;
use crate::table::{Kernel, Table};

pub const FLIP_STAY: usize = 0;
pub const FLIP_FLIP: usize = 1;

/// Two states, actions `stay` and `flip`, deterministic, `r(s, .) = 1[s = 1]`.
pub fn flip_mdp(discount: f64) -> FlatMdp {
    let transition = Kernel::from_fn(2, 2, 2, |s, a, n| {
        let target = if a == FLIP_FLIP { 1 - s } else { s };
        if n == target {
            1.0
        } else {
            0.0
        }
    });
    let reward = Table::from_fn(2, 2, |s, _| if s == 1 { 1.0 } else { 0.0 });
    FlatMdp::new(transition, reward, discount).expect("flip MDP is valid")
}

/// Flip MDP with `gamma = 0.9`, `T = 2`, `Omega = S` and indicator low reward.
pub fn flip_feudal() -> FeudalProblem {
    FeudalProblem::new(
        flip_mdp(0.9),
        FeudalOptions {
            epoch_length: 2,
            gamma_low: 0.9,
            ..Default::default()
        },
    )
    .expect("flip feudal instance is valid")
}
