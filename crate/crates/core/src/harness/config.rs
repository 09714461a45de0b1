use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{build_four_rooms, flip_feudal, random_feudal, Cell, FourRooms, FourRoomsConfig, RandomFeudalSpec};
use crate::error::{Error, Result};
use crate::feudal::FeudalProblem;
use crate::qlearning::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    FourRooms {
        #[serde(default)]
        layout: FourRoomsConfig,
        #[serde(default = "default_four_rooms_epoch")]
        epoch_length: usize,
        #[serde(default = "default_gamma_low")]
        gamma_low: f64,
    },
    /// Two-state flip MDP with `T = 2` and `Omega = S`.
    Flip,
    Random {
        #[serde(default)]
        spec: RandomFeudalSpec,
        #[serde(default)]
        instance_seed: u64,
    },
    /// A feudal problem JSON document.
    File { path: PathBuf },
}

fn default_four_rooms_epoch() -> usize {
    10
}

fn default_gamma_low() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Feudal,
    /// Watkins Q-learning on the flat MDP.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    /// Fraction of the environment's maximum episode reward.
    pub fraction: f64,
    /// Absolute threshold; overrides `fraction` when set.
    pub value: Option<f64>,
    pub patience: usize,
    pub window: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            fraction: 0.98,
            value: None,
            patience: 100,
            window: 50,
        }
    }
}

impl ThresholdConfig {
    pub fn resolve(&self, max_reward: Option<f64>) -> Option<f64> {
        self.value.or(max_reward.map(|m| self.fraction * m))
    }
}

/// Second phase of a continual-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub relocated_goal: Cell,
    /// Episodes in phase 2; defaults to the phase-1 count.
    #[serde(default)]
    pub episodes: Option<usize>,
    /// Also train phase 2 from fresh tables for comparison.
    #[serde(default = "yes")]
    pub cold_baseline: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub agent: AgentKind,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Tables JSON written by a previous run.
    #[serde(default)]
    pub warm_start: Option<PathBuf>,
    #[serde(default)]
    pub continual: Option<ContinualConfig>,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    /// Relative tolerance of the oracle cross-check on enumerable instances.
    #[serde(default = "default_oracle_tolerance")]
    pub oracle_tolerance: f64,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_oracle_tolerance() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn new(environment: EnvironmentSpec, agent: AgentKind, training: TrainingConfig) -> Self {
        Self {
            name: None,
            environment,
            agent,
            training,
            output_dir: default_output(),
            warm_start: None,
            continual: None,
            threshold: ThresholdConfig::default(),
            oracle_tolerance: default_oracle_tolerance(),
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`. Relative paths in
    /// the document are resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let EnvironmentSpec::File { path } = &mut self.environment {
            fix(path);
        }
        if let Some(p) = &mut self.warm_start {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if let EnvironmentSpec::File { path } = &self.environment {
            if !path.exists() {
                return Err(Error::Config(format!("environment file {} does not exist", path.display())));
            }
        }
        if let Some(p) = &self.warm_start {
            if !p.exists() {
                return Err(Error::Config(format!("warm-start tables {} do not exist", p.display())));
            }
        }
        if self.continual.is_some() && !matches!(self.environment, EnvironmentSpec::FourRooms { .. }) {
            return Err(Error::Config("continual mode needs a four_rooms environment".into()));
        }
        if !(self.threshold.fraction > 0.0) || self.threshold.patience == 0 || self.threshold.window == 0 {
            return Err(Error::Config("threshold needs fraction > 0, patience >= 1 and window >= 1".into()));
        }
        if !(self.oracle_tolerance > 0.0) {
            return Err(Error::Config("oracle tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// A problem ready for training, plus what the harness knows about it.
#[derive(Debug, Clone)]
pub struct BuiltEnvironment {
    pub problem: FeudalProblem,
    pub four_rooms: Option<FourRooms>,
}

impl BuiltEnvironment {
    /// Best undiscounted episode reward when it is known.
    pub fn max_episode_reward(&self, steps: usize) -> Option<f64> {
        self.four_rooms.as_ref().map(|fr| fr.max_episode_reward(steps))
    }

    pub fn start_state(&self) -> Option<usize> {
        self.four_rooms.as_ref().map(FourRooms::start_state)
    }
}

impl EnvironmentSpec {
    pub fn build(&self) -> Result<BuiltEnvironment> {
        match self {
            EnvironmentSpec::FourRooms { layout, epoch_length, gamma_low } => {
                let fr = build_four_rooms(layout)?;
                Ok(BuiltEnvironment {
                    problem: fr.feudal_problem(*epoch_length, *gamma_low)?,
                    four_rooms: Some(fr),
                })
            }
            EnvironmentSpec::Flip => Ok(BuiltEnvironment {
                problem: flip_feudal(),
                four_rooms: None,
            }),
            EnvironmentSpec::Random { spec, instance_seed } => {
                if spec.num_states == 0 || spec.num_actions == 0 || spec.num_goals == 0 || spec.epoch_length == 0 {
                    return Err(Error::Config("random instance needs positive sizes".into()));
                }
                Ok(BuiltEnvironment {
                    problem: random_feudal(spec, *instance_seed),
                    four_rooms: None,
                })
            }
            EnvironmentSpec::File { path } => Ok(BuiltEnvironment {
                problem: FeudalProblem::load_json(path)?,
                four_rooms: None,
            }),
        }
    }

    /// The same environment with the goal moved to `cell`.
    pub fn relocated(&self, cell: Cell) -> Result<EnvironmentSpec> {
        match self {
            EnvironmentSpec::FourRooms { layout, epoch_length, gamma_low } => {
                let mut layout = layout.clone();
                if let Some(sub) = &mut layout.subgoals {
                    for c in sub.iter_mut() {
                        if *c == layout.goal {
                            *c = cell;
                        }
                    }
                }
                layout.goal = cell;
                Ok(EnvironmentSpec::FourRooms {
                    layout,
                    epoch_length: *epoch_length,
                    gamma_low: *gamma_low,
                })
            }
            _ => Err(Error::Config("goal relocation needs a four_rooms environment".into())),
        }
    }
}
