use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AgentKind, BuiltEnvironment, ExperimentConfig};
use super::stats::{first_sustained, smoothed_rewards};
use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::oracle::solve_coupled;
use crate::qlearning::{
    train_feudal_from, train_flat_watkins_from, BoundReport, EpisodeLog, QTablePair, StartState,
    TrainingConfig,
};
use crate::rng::RngStream;
use crate::table::Table;

pub const EPISODES_CSV: &str = "episodes.csv";
pub const SMOOTHED_CSV: &str = "smoothed.csv";
pub const TABLES_JSON: &str = "q_tables.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PLOT_SCRIPT: &str = "plot.gp";

/// Learned tables of either agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "agent", rename_all = "snake_case")]
pub enum AgentTables {
    Feudal(QTablePair),
    Flat { q: Table },
}

impl AgentTables {
    pub fn zeros(agent: AgentKind, problem: &FeudalProblem, value: f64) -> Self {
        match agent {
            AgentKind::Feudal => AgentTables::Feudal(QTablePair::filled(problem, value)),
            AgentKind::Flat => AgentTables::Flat {
                q: Table::filled(problem.num_states(), problem.num_actions(), value),
            },
        }
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            AgentTables::Feudal(_) => AgentKind::Feudal,
            AgentTables::Flat { .. } => AgentKind::Flat,
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRun {
    pub tables: AgentTables,
    pub logs: Vec<EpisodeLog>,
    pub bounds: BoundReport,
}

/// One training phase from `initial` (fresh counters).
pub fn train_phase(
    problem: &FeudalProblem,
    training: &TrainingConfig,
    initial: AgentTables,
    rng: &mut RngStream,
) -> Result<PhaseRun> {
    match initial {
        AgentTables::Feudal(pair) => {
            let out = train_feudal_from(problem, training, pair, rng)?;
            Ok(PhaseRun {
                tables: AgentTables::Feudal(out.tables),
                logs: out.logs,
                bounds: out.bounds,
            })
        }
        AgentTables::Flat { q } => {
            let out = train_flat_watkins_from(problem.flat(), training, q, rng)?;
            Ok(PhaseRun {
                tables: AgentTables::Flat { q: out.q },
                logs: out.logs,
                bounds: out.bounds,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub name: String,
    pub episodes: usize,
    pub max_episode_reward: Option<f64>,
    pub threshold: Option<f64>,
    pub episodes_to_threshold: Option<usize>,
    /// Last value of the smoothed reward curve.
    pub asymptotic_reward: Option<f64>,
    pub bounds: BoundReport,
}

/// Final tables against the coupled fixed point, relative to `max(1, ||Q*||)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub tolerance: f64,
    pub solved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub high_error: Option<f64>,
    pub low_error: Option<f64>,
    pub high_within: bool,
    pub low_within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: Option<String>,
    pub agent: AgentKind,
    pub seed: u64,
    pub phases: Vec<PhaseSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cold_baseline: Option<PhaseSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
}

impl ExperimentSummary {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_logs_csv(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(["seed", "episode", "cum_reward", "low_steps", "high_decisions", "tau_high", "tau_low"])?;
    for log in logs {
        w.serialize(log)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_logs_csv(path: &Path) -> Result<Vec<EpisodeLog>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn write_smoothed_csv(path: &Path, logs: &[EpisodeLog], smoothed: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["episode", "cum_reward", "smoothed"])?;
    for (log, s) in logs.iter().zip(smoothed) {
        w.write_record([log.episode.to_string(), log.cum_reward.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Gnuplot script for the raw and smoothed curves of every phase directory.
pub fn plot_script(phases: &[(String, String)], window: usize) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key top left\n");
    s.push_str("set xlabel 'episode'\n");
    s.push_str("set ylabel 'cumulative reward'\n");
    s.push_str("set terminal pngcairo size 900,540\n");
    s.push_str("set output 'rewards.png'\n");
    let curves: Vec<String> = phases
        .iter()
        .flat_map(|(label, file)| {
            [
                format!("'{file}' using 1:2 skip 1 with lines lc rgb '#c0c0c0' title '{label} raw'"),
                format!("'{file}' using 1:3 skip 1 with lines lw 2 title '{label} moving average {window}'"),
            ]
        })
        .collect();
    s.push_str("plot ");
    s.push_str(&curves.join(", \\\n     "));
    s.push('\n');
    s
}

fn summarize(name: &str, run: &PhaseRun, env: &BuiltEnvironment, training: &TrainingConfig, cfg: &ExperimentConfig) -> (PhaseSummary, Vec<f64>) {
    let smoothed = smoothed_rewards(&run.logs, cfg.threshold.window);
    let max = env.max_episode_reward(training.steps_per_episode);
    let threshold = cfg.threshold.resolve(max);
    let summary = PhaseSummary {
        name: name.to_string(),
        episodes: run.logs.len(),
        max_episode_reward: max,
        threshold,
        episodes_to_threshold: threshold.and_then(|t| first_sustained(&smoothed, t, cfg.threshold.patience)),
        asymptotic_reward: smoothed.last().copied(),
        bounds: run.bounds.clone(),
    };
    (summary, smoothed)
}

fn write_phase(dir: &Path, run: &PhaseRun, smoothed: &[f64]) -> Result<()> {
    create_dir(dir)?;
    write_logs_csv(&dir.join(EPISODES_CSV), &run.logs)?;
    write_smoothed_csv(&dir.join(SMOOTHED_CSV), &run.logs, smoothed)?;
    run.tables.save_json(dir.join(TABLES_JSON))
}

/// Compares feudal tables with the coupled oracle when the instance is enumerable.
pub fn oracle_check(problem: &FeudalProblem, tables: &AgentTables, tolerance: f64) -> Option<OracleCheck> {
    let AgentTables::Feudal(pair) = tables else {
        return None;
    };
    problem.check_enumerable().ok()?;
    Some(match solve_coupled(problem, 1e-9) {
        Ok(sol) => {
            let rel = |learned: &Table, exact: &Table| learned.sup_distance(exact) / exact.max_abs().max(1.0);
            let high_error = rel(&pair.high, &sol.pair.high);
            let low_error = rel(&pair.low, &sol.pair.low);
            OracleCheck {
                tolerance,
                solved: true,
                error: None,
                high_error: Some(high_error),
                low_error: Some(low_error),
                high_within: high_error <= tolerance,
                low_within: low_error <= tolerance,
            }
        }
        Err(e) => OracleCheck {
            tolerance,
            solved: false,
            error: Some(e.to_string()),
            high_error: None,
            low_error: None,
            high_within: false,
            low_within: false,
        },
    })
}

fn with_start(training: &TrainingConfig, env: &BuiltEnvironment) -> TrainingConfig {
    let mut t = training.clone();
    if let (StartState::Fixed { .. }, Some(s)) = (t.start, env.start_state()) {
        t.start = StartState::Fixed { state: s };
    }
    t
}

/// Trains every phase of `cfg`, writes the output bundle into `cfg.output_dir`
/// and returns the summary.
///
/// Layout: a single-phase run writes `episodes.csv`, `smoothed.csv`,
/// `q_tables.json`, `summary.json` and `plot.gp` at the top level. Continual
/// runs put each phase (`phase1`, `phase2`, optionally `phase2_cold`) in its
/// own subdirectory with the summary and plot script at the top.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    create_dir(&out)?;
    let env = cfg.environment.build()?;
    let training = with_start(&cfg.training, &env);
    let initial = match &cfg.warm_start {
        Some(path) => {
            let t = AgentTables::load_json(path)?;
            if t.kind() != cfg.agent {
                return Err(Error::Config(format!("warm-start tables in {} belong to another agent", path.display())));
            }
            t
        }
        None => AgentTables::zeros(cfg.agent, &env.problem, training.initial_q),
    };
    let mut rng = RngStream::new(training.seed);
    let phase1 = train_phase(&env.problem, &training, initial, &mut rng)?;
    let (s1, sm1) = summarize("phase1", &phase1, &env, &training, cfg);

    let mut summary = ExperimentSummary {
        name: cfg.name.clone(),
        agent: cfg.agent,
        seed: training.seed,
        phases: vec![s1],
        cold_baseline: None,
        oracle: None,
    };

    let Some(continual) = &cfg.continual else {
        write_logs_csv(&out.join(EPISODES_CSV), &phase1.logs)?;
        write_smoothed_csv(&out.join(SMOOTHED_CSV), &phase1.logs, &sm1)?;
        phase1.tables.save_json(out.join(TABLES_JSON))?;
        summary.oracle = oracle_check(&env.problem, &phase1.tables, cfg.oracle_tolerance);
        write_text(&out.join(PLOT_SCRIPT), &plot_script(&[("phase1".into(), SMOOTHED_CSV.into())], cfg.threshold.window))?;
        write_text(&out.join(SUMMARY_JSON), &serde_json::to_string_pretty(&summary)?)?;
        return Ok(summary);
    };

    write_phase(&out.join("phase1"), &phase1, &sm1)?;
    let env2 = cfg.environment.relocated(continual.relocated_goal)?.build()?;
    let mut training2 = with_start(&cfg.training, &env2);
    if let Some(n) = continual.episodes {
        training2.episodes = n;
    }
    let phase2 = train_phase(&env2.problem, &training2, phase1.tables.clone(), &mut rng)?;
    let (s2, sm2) = summarize("phase2", &phase2, &env2, &training2, cfg);
    write_phase(&out.join("phase2"), &phase2, &sm2)?;
    summary.phases.push(s2);
    let mut plots: Vec<(String, String)> = vec![
        ("phase1".into(), format!("phase1/{SMOOTHED_CSV}")),
        ("phase2".into(), format!("phase2/{SMOOTHED_CSV}")),
    ];

    if continual.cold_baseline {
        let mut cold_rng = RngStream::substream(training.seed, 1);
        let fresh = AgentTables::zeros(cfg.agent, &env2.problem, training2.initial_q);
        let cold = train_phase(&env2.problem, &training2, fresh, &mut cold_rng)?;
        let (sc, smc) = summarize("phase2_cold", &cold, &env2, &training2, cfg);
        write_phase(&out.join("phase2_cold"), &cold, &smc)?;
        summary.cold_baseline = Some(sc);
        plots.push(("phase2 cold".into(), format!("phase2_cold/{SMOOTHED_CSV}")));
    }
    write_text(&out.join(PLOT_SCRIPT), &plot_script(&plots, cfg.threshold.window))?;
    write_text(&out.join(SUMMARY_JSON), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Every `summary.json` directly in `dir` or one level below.
pub fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let top = dir.join(SUMMARY_JSON);
    if top.exists() {
        found.push(top);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let p = sub.join(SUMMARY_JSON);
        if p.exists() {
            found.push(p);
        }
    }
    Ok(found)
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Plain-text table of all summaries under `dir`.
pub fn report(dir: &Path) -> Result<String> {
    let paths = find_summaries(dir)?;
    if paths.is_empty() {
        return Err(Error::Config(format!("no {SUMMARY_JSON} under {}", dir.display())));
    }
    let mut out = String::from("run\tagent\tseed\tphase\tepisodes\tmax\tthreshold\tepisodes_to_threshold\tasymptotic\tbound_violations\n");
    for path in paths {
        let s = ExperimentSummary::load_json(&path)?;
        let run = path.parent().map(|p| p.display().to_string()).unwrap_or_default();
        let agent = match s.agent {
            AgentKind::Feudal => "feudal",
            AgentKind::Flat => "flat",
        };
        for p in s.phases.iter().chain(s.cold_baseline.iter()) {
            out.push_str(&format!(
                "{run}\t{agent}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                s.seed,
                p.name,
                p.episodes,
                fmt_opt(p.max_episode_reward),
                fmt_opt(p.threshold.map(|t| format!("{t:.3}"))),
                fmt_opt(p.episodes_to_threshold),
                fmt_opt(p.asymptotic_reward.map(|r| format!("{r:.3}"))),
                p.bounds.violations.len(),
            ));
        }
        if let Some(o) = &s.oracle {
            out.push_str(&format!(
                "{run}\toracle\thigh_error={}\tlow_error={}\ttolerance={}\n",
                fmt_opt(o.high_error.map(|e| format!("{e:.4}"))),
                fmt_opt(o.low_error.map(|e| format!("{e:.4}"))),
                o.tolerance
            ));
        }
    }
    Ok(out)
}
