//! Four Rooms gridworld with minigrid-style turning actions.
//!
//! The grid is `2 * room_size + 3` cells wide: an outer wall, two rooms, a
//! dividing wall, two more rooms. Each dividing wall segment has one doorway
//! in the middle of the room it borders.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feudal::{FeudalOptions, FeudalProblem, LowRewardSpec};
use crate::mdp::FlatMdp;
use crate::table::{Kernel, Table};

pub const ACTION_LEFT: usize = 0;
pub const ACTION_RIGHT: usize = 1;
pub const ACTION_FORWARD: usize = 2;

/// `(row, col)` with row 0 at the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell(pub usize, pub usize);

/// Heading, numbered as in minigrid: east, south, west, north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    East,
    South,
    West,
    North,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::East,
        Orientation::South,
        Orientation::West,
        Orientation::North,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn clockwise(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn counter_clockwise(self) -> Self {
        Self::from_index(self.index() + 3)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Orientation::East => (0, 1),
            Orientation::South => (1, 0),
            Orientation::West => (0, -1),
            Orientation::North => (-1, 0),
        }
    }

    fn glyph(self) -> char {
        match self {
            Orientation::East => '>',
            Orientation::South => 'v',
            Orientation::West => '<',
            Orientation::North => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub cell: Cell,
    pub orientation: Orientation,
}

/// When the low level is paid for its current goal cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalReward {
    /// On the step that enters the goal cell from another cell.
    #[default]
    Arrival,
    /// On every step taken from inside the goal cell.
    Occupancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourRoomsConfig {
    pub room_size: usize,
    pub start: Cell,
    pub start_orientation: Orientation,
    /// Entering this cell pays `goal_reward`; the next action teleports to the start.
    pub goal: Cell,
    pub goal_reward: f64,
    /// High-level goal cells. `None` means the four doorways plus `goal`.
    pub subgoals: Option<Vec<Cell>>,
    pub goal_reward_rule: GoalReward,
    pub discount: f64,
}

impl Default for FourRoomsConfig {
    fn default() -> Self {
        Self {
            room_size: 5,
            start: Cell(1, 1),
            start_orientation: Orientation::East,
            goal: Cell(5, 5),
            goal_reward: 1.0,
            subgoals: None,
            goal_reward_rule: GoalReward::Arrival,
            discount: 0.9,
        }
    }
}

impl FourRoomsConfig {
    pub fn width(&self) -> usize {
        2 * self.room_size + 3
    }

    pub fn doorways(&self) -> [Cell; 4] {
        let wall = self.room_size + 1;
        let near = 1 + self.room_size / 2;
        let far = wall + 1 + self.room_size / 2;
        [Cell(near, wall), Cell(far, wall), Cell(wall, near), Cell(wall, far)]
    }

    pub fn is_walkable(&self, cell: Cell) -> bool {
        let n = self.width();
        let wall = self.room_size + 1;
        let Cell(r, c) = cell;
        if r == 0 || c == 0 || r >= n - 1 || c >= n - 1 {
            return false;
        }
        if r == wall || c == wall {
            return self.doorways().contains(&cell);
        }
        true
    }

    pub fn goal_cells(&self) -> Vec<Cell> {
        match &self.subgoals {
            Some(cells) => cells.clone(),
            None => {
                let mut cells = self.doorways().to_vec();
                cells.push(self.goal);
                cells
            }
        }
    }
}

/// A built Four Rooms instance.
#[derive(Debug, Clone)]
pub struct FourRooms {
    config: FourRoomsConfig,
    cells: Vec<Cell>,
    cell_ids: Vec<Option<usize>>,
    mdp: FlatMdp,
    goal_cells: Vec<Cell>,
}

pub fn build_four_rooms(config: &FourRoomsConfig) -> Result<FourRooms> {
    FourRooms::new(config.clone())
}

impl FourRooms {
    pub fn new(config: FourRoomsConfig) -> Result<Self> {
        if config.room_size < 3 || config.room_size.is_multiple_of(2) {
            return Err(Error::InvalidModel(format!(
                "room size must be odd and at least 3, got {}",
                config.room_size
            )));
        }
        for (name, cell) in [("start", config.start), ("goal", config.goal)] {
            if !config.is_walkable(cell) {
                return Err(Error::InvalidModel(format!("{name} cell {cell:?} is not walkable")));
            }
        }
        if config.start == config.goal {
            return Err(Error::InvalidModel("start and goal coincide".into()));
        }
        let goal_cells = config.goal_cells();
        if goal_cells.is_empty() {
            return Err(Error::InvalidModel("subgoal list is empty".into()));
        }
        for &cell in &goal_cells {
            if !config.is_walkable(cell) {
                return Err(Error::InvalidModel(format!("subgoal {cell:?} is not walkable")));
            }
        }

        let n = config.width();
        let mut cells = Vec::new();
        let mut cell_ids = vec![None; n * n];
        for r in 0..n {
            for c in 0..n {
                if config.is_walkable(Cell(r, c)) {
                    cell_ids[r * n + c] = Some(cells.len());
                    cells.push(Cell(r, c));
                }
            }
        }

        let ns = cells.len() * 4;
        let id = |cell: Cell, o: Orientation| cell_ids[cell.0 * n + cell.1].unwrap() * 4 + o.index();
        let start = id(config.start, config.start_orientation);
        let mut transition = Kernel::zeros(ns, 3, ns);
        let mut reward = Table::zeros(ns, 3);
        for (ci, &cell) in cells.iter().enumerate() {
            for o in Orientation::ALL {
                let s = ci * 4 + o.index();
                if cell == config.goal {
                    for a in 0..3 {
                        transition.set(s, a, start, 1.0);
                    }
                    continue;
                }
                transition.set(s, ACTION_LEFT, id(cell, o.counter_clockwise()), 1.0);
                transition.set(s, ACTION_RIGHT, id(cell, o.clockwise()), 1.0);
                let (dr, dc) = o.delta();
                let ahead = Cell(
                    (cell.0 as isize + dr) as usize,
                    (cell.1 as isize + dc) as usize,
                );
                if config.is_walkable(ahead) {
                    transition.set(s, ACTION_FORWARD, id(ahead, o), 1.0);
                    if ahead == config.goal {
                        reward.set(s, ACTION_FORWARD, config.goal_reward);
                    }
                } else {
                    transition.set(s, ACTION_FORWARD, s, 1.0);
                }
            }
        }
        let mdp = FlatMdp::new(transition, reward, config.discount)?;
        Ok(Self {
            config,
            cells,
            cell_ids,
            mdp,
            goal_cells,
        })
    }

    pub fn config(&self) -> &FourRoomsConfig {
        &self.config
    }

    pub fn mdp(&self) -> &FlatMdp {
        &self.mdp
    }

    pub fn into_mdp(self) -> FlatMdp {
        self.mdp
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn state_id(&self, state: GridState) -> Option<usize> {
        let n = self.config.width();
        let Cell(r, c) = state.cell;
        if r >= n || c >= n {
            return None;
        }
        self.cell_ids[r * n + c].map(|ci| ci * 4 + state.orientation.index())
    }

    pub fn grid_state(&self, id: usize) -> GridState {
        GridState {
            cell: self.cells[id / 4],
            orientation: Orientation::from_index(id % 4),
        }
    }

    pub fn start_state(&self) -> usize {
        self.state_id(GridState {
            cell: self.config.start,
            orientation: self.config.start_orientation,
        })
        .expect("start is walkable")
    }

    /// Cells the high level may pick, in goal-index order.
    pub fn goal_cells(&self) -> &[Cell] {
        &self.goal_cells
    }

    /// One state id per goal cell (facing east).
    pub fn goal_states(&self) -> Vec<usize> {
        self.goal_cells
            .iter()
            .map(|&cell| {
                self.state_id(GridState {
                    cell,
                    orientation: Orientation::East,
                })
                .expect("goal cells are walkable")
            })
            .collect()
    }

    /// Deterministic successor of `(s, a)`.
    pub fn successor(&self, state: usize, action: usize) -> usize {
        self.mdp
            .row(state, action)
            .iter()
            .position(|&p| p == 1.0)
            .expect("four rooms is deterministic")
    }

    /// `r^l((s, omega, c), a)` in `{0, 1}` for the cell of goal `omega`, per
    /// [`GoalReward`]. Headings are ignored.
    pub fn low_reward_table(&self, epoch_length: usize) -> Table {
        let ng = self.goal_cells.len();
        let rows = self.mdp.num_states() * ng * epoch_length;
        Table::from_fn(rows, 3, |i, a| {
            let rest = i / epoch_length;
            let s = rest / ng;
            let target = self.goal_cells[rest % ng];
            let here = self.cells[s / 4] == target;
            let paid = match self.config.goal_reward_rule {
                GoalReward::Occupancy => here,
                GoalReward::Arrival => !here && self.cells[self.successor(s, a) / 4] == target,
            };
            if paid {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn feudal_problem(&self, epoch_length: usize, gamma_low: f64) -> Result<FeudalProblem> {
        FeudalProblem::new(
            self.mdp.clone(),
            FeudalOptions {
                goals: Some(self.goal_states()),
                epoch_length,
                gamma_high: None,
                gamma_low,
                low_reward: LowRewardSpec::Table(self.low_reward_table(epoch_length)),
                ..Default::default()
            },
        )
    }

    /// Best undiscounted return over `steps` steps from the start state.
    pub fn max_episode_reward(&self, steps: usize) -> f64 {
        let ns = self.mdp.num_states();
        let successor: Vec<[usize; 3]> = (0..ns)
            .map(|s| [0, 1, 2].map(|a| self.successor(s, a)))
            .collect();
        let mut value = vec![0.0; ns];
        let mut next = vec![0.0; ns];
        for _ in 0..steps {
            for s in 0..ns {
                next[s] = (0..3)
                    .map(|a| self.mdp.reward(s, a) + value[successor[s][a]])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            std::mem::swap(&mut value, &mut next);
        }
        value[self.start_state()]
    }

    /// True when every state can reach the goal cell.
    pub fn goal_reachable_everywhere(&self) -> bool {
        let ns = self.mdp.num_states();
        let mut predecessors = vec![Vec::new(); ns];
        for s in 0..ns {
            for a in 0..3 {
                for (n, &p) in self.mdp.row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        predecessors[n].push(s);
                    }
                }
            }
        }
        let mut seen = vec![false; ns];
        let mut queue: VecDeque<usize> = (0..ns)
            .filter(|&s| self.cells[s / 4] == self.config.goal)
            .collect();
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(s) = queue.pop_front() {
            for &p in &predecessors[s] {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(p);
                }
            }
        }
        seen.into_iter().all(|x| x)
    }

    /// `#` wall, `.` floor, `G` goal, start drawn with its heading.
    pub fn ascii(&self) -> String {
        let n = self.config.width();
        let mut out = String::with_capacity(n * (n + 1));
        for r in 0..n {
            for c in 0..n {
                let cell = Cell(r, c);
                let ch = if cell == self.config.goal {
                    'G'
                } else if cell == self.config.start {
                    self.config.start_orientation.glyph()
                } else if self.config.is_walkable(cell) {
                    '.'
                } else {
                    '#'
                };
                out.push(ch);
            }
            let _ = writeln!(out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_rooms() -> FourRooms {
        build_four_rooms(&FourRoomsConfig::default()).unwrap()
    }

    #[test]
    fn walkable_count_by_enumeration() {
        let fr = default_rooms();
        let cfg = fr.config();
        let n = cfg.width();
        let mut walkable = 0;
        for r in 0..n {
            for c in 0..n {
                if cfg.is_walkable(Cell(r, c)) {
                    walkable += 1;
                }
            }
        }
        assert_eq!(walkable, 4 * 25 + 4);
        assert_eq!(fr.mdp().num_states(), 4 * walkable);
        assert!(fr.mdp().is_deterministic());
    }

    #[test]
    fn forward_into_wall_stays() {
        let fr = default_rooms();
        let s = fr
            .state_id(GridState { cell: Cell(1, 1), orientation: Orientation::North })
            .unwrap();
        assert_eq!(fr.mdp().prob(s, ACTION_FORWARD, s), 1.0);
        assert_eq!(fr.mdp().reward(s, ACTION_FORWARD), 0.0);
    }

    #[test]
    fn entering_goal_pays() {
        let fr = default_rooms();
        let s = fr
            .state_id(GridState { cell: Cell(4, 5), orientation: Orientation::South })
            .unwrap();
        assert_eq!(fr.mdp().reward(s, ACTION_FORWARD), 1.0);
        let g = fr
            .state_id(GridState { cell: Cell(5, 5), orientation: Orientation::South })
            .unwrap();
        assert_eq!(fr.mdp().prob(s, ACTION_FORWARD, g), 1.0);
        for a in 0..3 {
            assert_eq!(fr.mdp().prob(g, a, fr.start_state()), 1.0);
            assert_eq!(fr.mdp().reward(g, a), 0.0);
        }
    }

    #[test]
    fn turns() {
        let fr = default_rooms();
        let s = fr.start_state();
        let right = fr.grid_state(fr.mdp().row(s, ACTION_RIGHT).iter().position(|&p| p == 1.0).unwrap());
        assert_eq!(right.orientation, Orientation::South);
        let left = fr.grid_state(fr.mdp().row(s, ACTION_LEFT).iter().position(|&p| p == 1.0).unwrap());
        assert_eq!(left.orientation, Orientation::North);
    }

    #[test]
    fn reachability_and_max_reward() {
        let fr = default_rooms();
        assert!(fr.goal_reachable_everywhere());
        // 4 forward, turn, 4 forward into the goal, then one teleport step
        assert_eq!(fr.max_episode_reward(10), 1.0);
        assert_eq!(fr.max_episode_reward(300), 30.0);
    }

    #[test]
    fn invalid_layouts() {
        let bad = FourRoomsConfig { room_size: 4, ..Default::default() };
        assert!(build_four_rooms(&bad).is_err());
        let bad = FourRoomsConfig { goal: Cell(6, 6), ..Default::default() };
        assert!(build_four_rooms(&bad).is_err());
    }

    #[test]
    fn ascii_golden() {
        let expected = "\
#############
#>....#.....#
#.....#.....#
#...........#
#.....#.....#
#....G#.....#
###.#####.###
#.....#.....#
#.....#.....#
#...........#
#.....#.....#
#.....#.....#
#############
";
        let fr = default_rooms();
        assert_eq!(fr.ascii(), expected);
    }

    #[test]
    fn arrival_reward() {
        let fr = default_rooms();
        let t = 2;
        let table = fr.low_reward_table(t);
        let p = fr.feudal_problem(t, 0.9).unwrap();
        let space = p.low_space();
        let goal = fr.goal_cells().len() - 1;
        let before = fr.state_id(GridState { cell: Cell(4, 5), orientation: Orientation::South }).unwrap();
        assert_eq!(table.get(space.index_of(before, goal, 0), ACTION_FORWARD), 1.0);
        assert_eq!(table.get(space.index_of(before, goal, 1), ACTION_LEFT), 0.0);
        assert_eq!(table.get(space.index_of(before, 0, 0), ACTION_FORWARD), 0.0);
        // doorway 0 is (3, 6); turning inside it pays nothing
        let door = fr.state_id(GridState { cell: Cell(3, 6), orientation: Orientation::East }).unwrap();
        for a in 0..3 {
            assert_eq!(table.get(space.index_of(door, 0, 0), a), 0.0);
        }
        let west = fr.state_id(GridState { cell: Cell(3, 5), orientation: Orientation::East }).unwrap();
        assert_eq!(table.get(space.index_of(west, 0, 1), ACTION_FORWARD), 1.0);
    }

    #[test]
    fn low_reward_matches_cell() {
        let fr = build_four_rooms(&FourRoomsConfig {
            goal_reward_rule: GoalReward::Occupancy,
            ..Default::default()
        })
        .unwrap();
        let t = 3;
        let table = fr.low_reward_table(t);
        let p = fr.feudal_problem(t, 0.9).unwrap();
        let space = p.low_space();
        let goal = fr.goal_cells().len() - 1;
        for o in Orientation::ALL {
            let s = fr.state_id(GridState { cell: Cell(5, 5), orientation: o }).unwrap();
            assert_eq!(table.get(space.index_of(s, goal, 1), 0), 1.0);
            assert_eq!(table.get(space.index_of(s, 0, 1), 0), 0.0);
        }
    }
}
