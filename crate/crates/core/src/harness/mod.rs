//! Config-driven experiment runs, reward curves, and the property batteries
//! behind the `verify` command.

mod config;
mod run;
mod stats;
mod verify;

pub use config::{
    AgentKind, BuiltEnvironment, ContinualConfig, EnvironmentSpec, ExperimentConfig, ThresholdConfig,
};
pub use run::{
    find_summaries, oracle_check, plot_script, read_logs_csv, report, run_experiment, train_phase,
    write_logs_csv, AgentTables, ExperimentSummary, OracleCheck, PhaseRun, PhaseSummary,
    EPISODES_CSV, PLOT_SCRIPT, SMOOTHED_CSV, SUMMARY_JSON, TABLES_JSON,
};
pub use stats::{episodes_to_threshold, first_sustained, moving_average, smoothed_rewards};
pub use verify::{
    battery_instances, contraction_checks, martingale_checks, ode_checks, run_suite, scaled_checks,
    thread_pool, Check, Suite, SuiteReport, THREADS_ENV,
};
