use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mocc::coordinator::Strategy;
use mocc::harness::{self, csv_table, scenarios, Config, RunMetrics};

#[derive(Parser)]
#[command(name = "mocc", version, about = "Mobile optimistic concurrency control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its trace, metrics and history.
    Run {
        /// TOML config; optional when --scenario names a built-in.
        config: Option<PathBuf>,
        /// Built-in scenario, e.g. banking-case-i.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay one workload under several strategies.
    Compare {
        config: PathBuf,
        /// Comma-separated, e.g. multicast-restart,abort-on-conflict.
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<Strategy>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the verifier on a history.json written by `run`.
    Verify { history: PathBuf },
    /// Throughput and restarts against the number of hosts.
    Sweep {
        config: PathBuf,
        /// `a..b` doubles from a to b; `a..b/step` counts up by step.
        #[arg(long, default_value = "2..64")]
        hosts: String,
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    Scenarios,
}

fn load(config: Option<&PathBuf>, scenario: Option<&str>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match (config, scenario) {
        (_, Some(name)) => scenarios::builtin(name, seed.unwrap_or(0))
            .with_context(|| format!("unknown scenario {name:?}; try `mocc scenarios`"))?,
        (Some(path), None) => Config::load(path)?,
        (None, None) => bail!("give a config file or --scenario"),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit_table(rows: &[RunMetrics], out: Option<&PathBuf>) -> Result<()> {
    let table = csv_table(rows);
    match out {
        Some(path) => {
            fs::write(path, &table).with_context(|| path.display().to_string())?;
            let json = path.with_extension("json");
            fs::write(&json, serde_json::to_string_pretty(rows)? + "\n")?;
            eprintln!("wrote {} and {}", path.display(), json.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

/// Exit status: nonzero when any verdict fails.
fn check(rows: &[RunMetrics]) -> ExitCode {
    match rows.iter().find(|m| !m.verdict.passed()) {
        Some(m) => {
            eprintln!(
                "verification failed ({} seed {} hosts {}): {}",
                m.strategy,
                m.seed,
                m.hosts,
                m.verdict.error.as_deref().unwrap_or("unknown")
            );
            ExitCode::FAILURE
        }
        None => ExitCode::SUCCESS,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            scenario,
            seed,
            strategy,
            out,
        } => {
            let mut cfg = load(config.as_ref(), scenario.as_deref(), seed)?;
            if let Some(s) = strategy {
                cfg.strategy = s;
            }
            let result = harness::run_config(&cfg, true)?;
            harness::write_artifacts(&result, &out)?;
            let m = &result.metrics;
            println!(
                "{}: committed {} restarted {} aborted {} failed {} starved {} | uplink {} msgs downlink {} msgs | serializable {}",
                m.strategy,
                m.committed,
                m.restarted,
                m.aborted,
                m.locally_failed,
                m.starved,
                m.uplink_messages,
                m.downlink_messages,
                m.verdict.passed()
            );
            eprintln!("artifacts in {}", out.display());
            Ok(check(std::slice::from_ref(m)))
        }
        Command::Compare {
            config,
            strategies,
            seed,
            out,
        } => {
            let cfg = load(Some(&config), None, seed)?;
            let rows = harness::compare_strategies(&cfg, &strategies)?;
            emit_table(&rows, out.as_ref())?;
            Ok(check(&rows))
        }
        Command::Verify { history } => {
            let h = harness::load_history(&history)?;
            let v = h.verify();
            println!("{}", serde_json::to_string_pretty(&v)?);
            if v.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{}", v.error.as_deref().unwrap_or("verification failed"));
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Sweep {
            config,
            hosts,
            strategies,
            out,
        } => {
            let cfg = load(Some(&config), None, None)?;
            let hosts = harness::parse_host_range(&hosts)?;
            let strategies = strategies.unwrap_or_else(|| vec![cfg.strategy]);
            let rows = harness::sweep(&cfg, &hosts, &strategies)?;
            emit_table(&rows, out.as_ref())?;
            Ok(check(&rows))
        }
        Command::Scenarios => {
            for name in scenarios::BUILTINS {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
