//! Exit criteria. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use feudalq::envs::{flip_feudal, random_feudal, RandomFeudalSpec};
use feudalq::equilibrium::{stackelberg_candidates, verify_nash, verify_stackelberg};
use feudalq::feudal::{compose_high_dynamics, high_reward_table, sample_epoch};
use feudalq::harness::{
    contraction_checks, martingale_checks, ode_checks, run_experiment, scaled_checks, train_phase,
    AgentTables, ExperimentConfig,
};
use feudalq::oracle::{solve_coupled, OdeConfig};
use feudalq::policy::{BoltzmannSchedule, PolicyExtractor, TemperatureDecay};
use feudalq::qlearning::{
    train_feudal, BoundReport, StartState, StepCounting, StepSizeSchedule, TemperatureClock,
};
use feudalq::{RngStream, TrainingConfig};

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, title, pass, detail }
}

fn config_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn decay_to(initial: f64, floor: f64, visits: f64) -> BoltzmannSchedule {
    BoltzmannSchedule {
        initial_temperature: initial,
        decay: TemperatureDecay::Exponential {
            rate: (floor / initial).powf(1.0 / visits),
        },
        floor,
    }
}

fn convergence_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        episodes: 20_000,
        steps_per_episode: 100,
        seed,
        step_sizes: StepSizeSchedule::new(0.51, 0.6, 1).unwrap(),
        step_counting: StepCounting::PerEntry,
        policy_low: decay_to(5.0, 0.05, 20_000.0),
        policy_high: decay_to(5.0, 0.03, 75_000.0),
        temperature_clock: TemperatureClock::PerState,
        start: StartState::Uniform,
        bound_check_interval: 10_000,
        ..Default::default()
    }
}

/// Criterion 1, plus the bound reports for criterion 2.
fn convergence(bounds: &mut Vec<(String, BoundReport)>) -> Outcome {
    let spec = RandomFeudalSpec::default();
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    let mut seed = 0u64;
    while used.len() < 20 {
        let p = random_feudal(&spec, seed);
        match solve_coupled(&p, 1e-9) {
            Ok(sol) => used.push((seed, p, sol)),
            Err(_) => skipped.push(seed),
        }
        seed += 1;
    }
    let mut good = 0;
    let mut lines = Vec::new();
    for (seed, p, sol) in &used {
        let out = train_feudal(p, &convergence_training(*seed), &mut RngStream::new(*seed)).unwrap();
        let low_err = out.tables.low.sup_distance(&sol.pair.low) / sol.pair.low.max_abs().max(1.0);
        let high_err = out.tables.high.sup_distance(&sol.pair.high) / sol.pair.high.max_abs().max(1.0);
        let ok = low_err <= 0.05 && high_err <= 0.05;
        good += ok as usize;
        lines.push(format!("{seed}:{low_err:.3}/{high_err:.3}"));
        bounds.push((format!("random instance {seed}"), out.bounds));
    }
    outcome(
        "1",
        "convergence to the coupled fixed point",
        good >= 18,
        format!(
            "{good}/20 runs within 5% (need 18); seeds without a pure fixed point skipped: {skipped:?}; relative low/high error per seed: {}",
            lines.join(" ")
        ),
    )
}

fn stability(bounds: &[(String, BoundReport)]) -> Outcome {
    let violations: usize = bounds.iter().map(|(_, b)| b.violations.len()).sum();
    let checks: u64 = bounds.iter().map(|(_, b)| b.checks).sum();
    let worst_low = bounds
        .iter()
        .map(|(_, b)| b.max_low_norm / b.low_bound)
        .fold(0.0, f64::max);
    let worst_high = bounds
        .iter()
        .filter(|(_, b)| b.high_bound > 0.0)
        .map(|(_, b)| b.max_high_norm / b.high_bound)
        .fold(0.0, f64::max);
    outcome(
        "2",
        "iterates stay inside the analytic bounds",
        violations == 0 && !bounds.is_empty(),
        format!(
            "{} runs, {checks} checks, {violations} violations; largest norm/bound low {worst_low:.3} high {worst_high:.3}",
            bounds.len()
        ),
    )
}

fn composition() -> Outcome {
    let mut rng = RngStream::new(31);
    let mut exact_err: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    let mut mc_fail = 0;
    let n = 100_000;
    for p in common::composition_instances() {
        let pi = common::random_policy(p.num_low_states(), p.num_actions(), &mut rng);
        let kernel = compose_high_dynamics(&p, &pi).unwrap();
        let reward = high_reward_table(&p, &pi).unwrap();
        for s in 0..p.num_states() {
            for g in 0..p.num_goals() {
                let (dist, r) = common::enumerate_epoch(&p, &pi, s, g);
                for (k, &q) in dist.iter().enumerate() {
                    exact_err = exact_err.max((kernel.get(s, g, k) - q).abs());
                }
                exact_err = exact_err.max((reward.get(s, g) - r).abs());

                let mut counts = vec![0usize; p.num_states()];
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for _ in 0..n {
                    let ep = sample_epoch(&p, &pi, s, g, &mut rng);
                    counts[ep.terminal] += 1;
                    sum += ep.discounted_reward;
                    sum_sq += ep.discounted_reward * ep.discounted_reward;
                }
                let nf = n as f64;
                for (k, &c) in counts.iter().enumerate() {
                    let q = kernel.get(s, g, k);
                    let sd = (q * (1.0 - q) / nf).sqrt();
                    let dev = (c as f64 / nf - q).abs();
                    if sd == 0.0 {
                        mc_fail += (dev > 0.0) as usize;
                    } else {
                        worst_sigma = worst_sigma.max(dev / sd);
                        mc_fail += (dev >= 4.0 * sd) as usize;
                    }
                }
                let mean = sum / nf;
                let sd = (((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf).sqrt();
                let dev = (mean - reward.get(s, g)).abs();
                if sd == 0.0 {
                    mc_fail += (dev > 1e-12) as usize;
                } else {
                    worst_sigma = worst_sigma.max(dev / sd);
                    mc_fail += (dev >= 4.0 * sd) as usize;
                }
            }
        }
    }
    outcome(
        "3",
        "composition matches enumeration and Monte Carlo",
        exact_err <= 1e-12 && mc_fail == 0,
        format!("max |compose - enumerate| = {exact_err:.2e}; Monte Carlo entries beyond 4 sigma: {mc_fail}; worst deviation {worst_sigma:.2} sigma"),
    )
}

fn contraction() -> Outcome {
    let mut all = Vec::new();
    for (k, p) in common::composition_instances().iter().enumerate() {
        all.extend(contraction_checks(&format!("instance {k}"), p, 1000, 500 + k as u64).unwrap());
    }
    all.extend(contraction_checks("flip", &flip_feudal(), 1000, 499).unwrap());
    let worst = all
        .iter()
        .map(|c| c.value - (c.bound - 1e-10))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_low = all.iter().filter(|c| c.name.contains("low")).map(|c| c.value).fold(0.0, f64::max);
    let max_high = all.iter().filter(|c| c.name.contains("high")).map(|c| c.value).fold(0.0, f64::max);
    outcome(
        "4",
        "Bellman operators contract at their moduli",
        all.iter().all(|c| c.pass),
        format!(
            "{} operator checks; max observed ratio low {max_low:.6} high {max_high:.6}; largest ratio - modulus {worst:.2e}",
            all.len()
        ),
    )
}

fn martingale() -> Outcome {
    let checks = martingale_checks("flip", &flip_feudal(), 100_000, 10, 7).unwrap();
    let high = checks.iter().filter(|c| c.name.contains("M2")).count();
    let failed: Vec<_> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    outcome(
        "5",
        "martingale noise has zero mean",
        failed.is_empty() && high == 4 && checks.len() == 14,
        format!("{} coordinates ({high} high, {} low), failures: {failed:?}", checks.len(), checks.len() - high),
    )
}

fn ode_tracking() -> Outcome {
    let ode = OdeConfig {
        step: 0.01,
        horizon: 200.0,
        epsilon: 0.01,
        samples: 3,
    };
    let checks = ode_checks("flip", &flip_feudal(), &ode, 5, 1e-3, 17).unwrap();
    let worst = checks.iter().map(|c| c.value).fold(0.0, f64::max);
    outcome(
        "6",
        "mean-field ODE reaches (lambda(y*), y*)",
        checks.len() == 5 && checks.iter().all(|c| c.pass),
        format!("5 starts, largest terminal distance {worst:.2e} (limit 1e-3)"),
    )
}

fn scaled_fields() -> Outcome {
    let mut all = Vec::new();
    let instances = [
        ("flip", flip_feudal()),
        ("random", random_feudal(&RandomFeudalSpec::default(), 3)),
    ];
    for (name, p) in &instances {
        for (tag, ex) in [
            ("greedy", PolicyExtractor::Greedy),
            ("boltzmann", PolicyExtractor::Boltzmann { temperature: 1.0 }),
        ] {
            all.extend(scaled_checks(&format!("{name} {tag}"), p, ex, 20, 41).unwrap());
        }
    }
    let failed: Vec<_> = all.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    outcome(
        "7",
        "scaled fields approach their limits",
        failed.is_empty(),
        format!("{} checks over c in {{1,10,100,1000}}, failures: {failed:?}", all.len()),
    )
}

fn equilibrium() -> Outcome {
    let p = flip_feudal();
    let sol = solve_coupled(&p, 1e-9).unwrap();
    let nash = verify_nash(&sol.pair, &p, 1e-8).unwrap();
    let candidates = stackelberg_candidates(&p, 1e-12).unwrap();
    let st = verify_stackelberg(&sol.pair, &p, &candidates, 1e-8).unwrap();
    let residuals_ok = nash.reaction.residual_high < 1e-8 && nash.reaction.residual_low < 1e-8;
    outcome(
        "8",
        "coupled solution is Nash and Stackelberg",
        nash.is_nash && st.is_stackelberg && residuals_ok && candidates.len() <= 4,
        format!(
            "residuals high {:.2e} low {:.2e}; {} candidates, min margin {:.3e}",
            nash.reaction.residual_high, nash.reaction.residual_low, st.candidates_checked, st.min_margin
        ),
    )
}

fn four_rooms(bounds: &mut Vec<(String, BoundReport)>) -> (Outcome, Outcome) {
    let feudal_cfg = ExperimentConfig::load(config_path("four_rooms.toml")).unwrap();
    let flat_cfg = ExperimentConfig::load(config_path("four_rooms_flat.toml")).unwrap();
    let continual_cfg = ExperimentConfig::load(config_path("four_rooms_continual.toml")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut parity = Vec::new();
    let mut parity_ok = true;
    let mut wins = 0;
    let mut cl = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in 0..5u64 {
        let started = Instant::now();
        let mut tails = [0.0; 2];
        for (i, cfg) in [&feudal_cfg, &flat_cfg].into_iter().enumerate() {
            let env = cfg.environment.build().unwrap();
            let mut t = cfg.training.clone();
            t.seed = seed;
            t.start = StartState::Fixed { state: env.start_state().unwrap() };
            let init = AgentTables::zeros(cfg.agent, &env.problem, 0.0);
            let run = train_phase(&env.problem, &t, init, &mut RngStream::new(seed)).unwrap();
            let smoothed = feudalq::harness::smoothed_rewards(&run.logs, cfg.threshold.window);
            tails[i] = *smoothed.last().unwrap();
            bounds.push((format!("four rooms {:?} seed {seed}", cfg.agent), run.bounds));
        }
        let ok = (tails[0] - tails[1]).abs() <= 0.02 * tails[1].abs();
        parity_ok &= ok;
        parity.push(format!("{seed}:{:.2}/{:.2}", tails[0], tails[1]));

        let mut cfg = continual_cfg.clone();
        cfg.training.seed = seed;
        cfg.output_dir = tmp.path().join(format!("seed{seed}"));
        let summary = run_experiment(&cfg).unwrap();
        for ph in summary.phases.iter().chain(summary.cold_baseline.iter()) {
            bounds.push((format!("four rooms continual {} seed {seed}", ph.name), ph.bounds.clone()));
        }
        let warm = summary.phases[1].episodes_to_threshold;
        let cold = summary.cold_baseline.as_ref().unwrap().episodes_to_threshold;
        let faster = match (warm, cold) {
            (Some(w), Some(c)) => w < c,
            (Some(_), None) => true,
            _ => false,
        };
        wins += faster as usize;
        cl.push(format!("{seed}:{}/{}", fmt(warm), fmt(cold)));
        slowest = slowest.max(started.elapsed().as_secs_f64());
    }
    (
        outcome(
            "9a",
            "Four Rooms feudal asymptote matches flat Q-learning within 2%",
            parity_ok,
            format!("smoothed final reward feudal/flat per seed: {}; slowest seed {slowest:.1}s", parity.join(" ")),
        ),
        outcome(
            "9b",
            "Four Rooms warm restart reaches threshold sooner than cold",
            wins >= 4,
            format!("warm faster in {wins}/5 seeds (need 4); episodes to threshold warm/cold: {}", cl.join(" ")),
        ),
    )
}

fn fmt(v: Option<usize>) -> String {
    v.map_or_else(|| "never".into(), |v| v.to_string())
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut bounds = Vec::new();
    let mut results = vec![
        composition(),
        contraction(),
        martingale(),
        ode_tracking(),
        scaled_fields(),
        equilibrium(),
    ];
    results.push(convergence(&mut bounds));
    let (a, b) = four_rooms(&mut bounds);
    results.push(a);
    results.push(b);
    results.push(stability(&bounds));
    results.sort_by_key(|o| o.id);

    println!("acceptance criteria");
    for o in &results {
        println!(
            "criterion {:<3} {} {}: {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.detail
        );
    }
    let failed: Vec<_> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
