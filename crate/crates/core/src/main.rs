use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use feudalq::equilibrium::{stackelberg_candidates, verify_nash, verify_stackelberg, NashCertificate, StackelbergCertificate};
use feudalq::harness::{report, run_experiment, run_suite, ExperimentConfig, Suite};
use feudalq::oracle::{solve_coupled, CoupledSolution};

#[derive(Parser)]
#[command(name = "feudalq", version, about = "Tabular Feudal Q-learning experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured agent and write CSV, tables, summary and plot script.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the coupled Bellman system and certify the solution.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Run a numerical property battery.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Tabulate the summaries of finished runs.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Serialize)]
struct OracleOutput {
    solution: CoupledSolution,
    nash: NashCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    stackelberg: Option<StackelbergCertificate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stackelberg_skipped: Option<String>,
}

fn run(cli: Cli) -> feudalq::Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.training.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let summary = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            eprintln!("wrote {}", cfg.output_dir.display());
            Ok(true)
        }
        Command::Oracle { config, tol } => {
            let cfg = ExperimentConfig::load(&config)?;
            let problem = cfg.environment.build()?.problem;
            let solution = solve_coupled(&problem, tol)?;
            let cert_tol = (tol * 10.0).max(1e-12);
            let nash = verify_nash(&solution.pair, &problem, cert_tol)?;
            let (stackelberg, stackelberg_skipped) = match stackelberg_candidates(&problem, tol) {
                Ok(c) => (Some(verify_stackelberg(&solution.pair, &problem, &c, cert_tol)?), None),
                Err(e @ feudalq::Error::InstanceTooLarge { .. }) => (None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            let ok = nash.is_nash && stackelberg.as_ref().is_none_or(|s| s.is_stackelberg);
            let out = OracleOutput {
                solution,
                nash,
                stackelberg,
                stackelberg_skipped,
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(ok)
        }
        Command::Verify { suite, json } => {
            let rep = run_suite(suite)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rep)?);
            } else {
                for c in &rep.checks {
                    println!(
                        "{} {} value={:.6e} bound={:.6e}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.name,
                        c.value,
                        c.bound
                    );
                }
                let failed = rep.checks.iter().filter(|c| !c.pass).count();
                println!("{:?}: {} checks, {failed} failed", suite, rep.checks.len());
            }
            Ok(rep.passed())
        }
        Command::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
