#![allow(dead_code)]

use feudalq::envs::{random_feudal, RandomFeudalSpec};
use feudalq::{FeudalProblem, RngStream, Table};

/// Terminal distribution and expected discounted reward of one epoch, by
/// walking every action/successor path of length `T` depth first.
pub fn enumerate_epoch(problem: &FeudalProblem, low_policy: &Table, start: usize, goal: usize) -> (Vec<f64>, f64) {
    let flat = problem.flat();
    let t = problem.epoch_length();
    let ng = problem.num_goals();
    let gamma = problem.gamma_high();
    let mut terminal = vec![0.0; flat.num_states()];
    let mut reward = 0.0;

    #[allow(clippy::too_many_arguments)]
    fn walk(
        flat: &feudalq::FlatMdp,
        low_policy: &Table,
        s: usize,
        goal: usize,
        depth: usize,
        t: usize,
        ng: usize,
        gamma: f64,
        prob: f64,
        terminal: &mut [f64],
        reward: &mut f64,
    ) {
        if depth == t {
            terminal[s] += prob;
            return;
        }
        let row = (s * ng + goal) * t + depth;
        for a in 0..flat.num_actions() {
            let pa = low_policy.get(row, a);
            if pa == 0.0 {
                continue;
            }
            *reward += prob * pa * gamma.powi(depth as i32) * flat.reward(s, a);
            for n in 0..flat.num_states() {
                let p = flat.prob(s, a, n);
                if p == 0.0 {
                    continue;
                }
                walk(flat, low_policy, n, goal, depth + 1, t, ng, gamma, prob * pa * p, terminal, reward);
            }
        }
    }

    walk(flat, low_policy, start, goal, 0, t, ng, gamma, 1.0, &mut terminal, &mut reward);
    (terminal, reward)
}

/// Row-stochastic table with Boltzmann rows of a random score table.
pub fn random_policy(rows: usize, cols: usize, rng: &mut RngStream) -> Table {
    let mut t = Table::zeros(rows, cols);
    for r in 0..rows {
        let w: Vec<f64> = (0..cols).map(|_| (2.0 * rng.uniform()).exp()).collect();
        let z: f64 = w.iter().sum();
        for (c, x) in w.iter().enumerate() {
            t.set(r, c, x / z);
        }
    }
    t
}

/// Ten small instances with `T <= 3`, `|S| <= 4`, `|A| <= 3`.
pub fn composition_instances() -> Vec<FeudalProblem> {
    (0..10u64)
        .map(|seed| {
            let spec = RandomFeudalSpec {
                num_states: 2 + (seed % 3) as usize,
                num_actions: 2 + (seed % 2) as usize,
                num_goals: 1 + (seed % 4) as usize,
                epoch_length: 1 + (seed % 3) as usize,
                sparsity: 0.4,
                ..Default::default()
            };
            random_feudal(&spec, 1000 + seed)
        })
        .collect()
}
