//! Runs configured simulations end to end: build the world, feed it the
//! workload, run to quiescence, verify the commit log and collect metrics.

pub mod config;
pub mod metrics;
pub mod scenarios;
pub mod workload;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{CoordinatorError, Strategy, TransactionInfoRegistry};
use crate::host::Outcome;
use crate::model::{InstanceId, RowKey, SiteId, Timestamp, CellId};
use crate::netsim::NetError;
use crate::sim::{SimError, World, WorldSetup};
use crate::store::{Store, StoreError};
use crate::trace::{self, TraceRecord};
use crate::verify::{self, Intent, Verdict};

pub use config::Config;
pub use metrics::{csv_table, RunMetrics};
pub use workload::{generate_workload, TimedArrival};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("{0}")]
    Io(String),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Everything needed to re-verify a run offline.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub catalog: TransactionInfoRegistry,
    pub intents: BTreeMap<InstanceId, Intent>,
    /// Final store, including the commit log.
    pub store: Store,
}

impl HistoryRecord {
    pub fn verify(&self) -> Verdict {
        verify::verify_run(&self.store, &self.catalog, &self.intents)
    }
}

pub struct RunResult {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceRecord>,
    pub history: HistoryRecord,
    pub outcomes: BTreeMap<InstanceId, Outcome>,
    pub workload: Vec<TimedArrival>,
    /// Final cell of every host.
    pub cells: BTreeMap<SiteId, CellId>,
}

/// Row keys the workload draws from: those of the first catalog entry's
/// relation.
fn workload_keys(store: &Store, registry: &TransactionInfoRegistry) -> Vec<RowKey> {
    registry
        .iter()
        .next()
        .and_then(|t| store.relation(&t.relation))
        .map(|r| r.rows.keys().copied().collect())
        .unwrap_or_default()
}

pub fn run_config(cfg: &Config, record_trace: bool) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let store = cfg.build_store()?;
    let registry = cfg.build_registry()?;
    let workload = generate_workload(cfg, &workload_keys(&store, &registry))?;
    for a in &workload {
        if registry.get(&a.arrival.txn_type_id).is_none() {
            return Err(HarnessError::InvalidSpec(format!(
                "workload uses unknown transaction type {}",
                a.arrival.txn_type_id
            )));
        }
    }
    let mut world = World::new(WorldSetup {
        store,
        registry: registry.clone(),
        coordinator: cfg.coordinator_config(),
        base_stations: cfg.base_stations(),
        hosts: cfg.host_setups(),
        wireless: cfg.wireless_link()?,
        backbone: cfg.backbone_link()?,
        broadcast_period_ms: cfg.broadcast_period_ms,
        record_trace,
    })?;
    for a in &workload {
        world.schedule_arrival(a.at, a.arrival.clone())?;
    }
    for m in &cfg.moves {
        world.schedule_move(Timestamp(m.at_ms), SiteId(m.site), CellId(m.cell))?;
    }
    world.run()?;

    let history = HistoryRecord {
        catalog: registry,
        intents: world.intents().clone(),
        store: world.store().clone(),
    };
    let verdict = history.verify();
    let metrics = RunMetrics::new(
        cfg.strategy,
        cfg.seed,
        cfg.hosts.count,
        world.stats(),
        world.traffic(),
        world.in_flight(),
        world.now().ms(),
        verdict,
    );
    let outcomes = world.outcomes();
    let cells = world.hosts().map(|h| (h.site(), h.cell())).collect();
    Ok(RunResult {
        metrics,
        trace: world.take_trace(),
        history,
        outcomes,
        workload,
        cells,
    })
}

/// Runs a built-in scenario.
pub fn run_scenario(name: &str, seed: u64, record_trace: bool) -> Result<RunResult, HarnessError> {
    let cfg = scenarios::builtin(name, seed).ok_or_else(|| HarnessError::UnknownScenario(name.into()))?;
    run_config(&cfg, record_trace)
}

/// The same workload under each strategy, in the order given.
pub fn compare_strategies(cfg: &Config, strategies: &[Strategy]) -> Result<Vec<RunMetrics>, HarnessError> {
    if strategies.len() < 2 {
        return Err(HarnessError::InvalidSpec("compare needs at least two strategies".into()));
    }
    strategies
        .par_iter()
        .map(|s| {
            let mut c = cfg.clone();
            c.strategy = *s;
            run_config(&c, false).map(|r| r.metrics)
        })
        .collect()
}

/// One run per (host count, strategy), ordered by host count then strategy.
pub fn sweep(cfg: &Config, hosts: &[u32], strategies: &[Strategy]) -> Result<Vec<RunMetrics>, HarnessError> {
    if hosts.is_empty() || strategies.is_empty() {
        return Err(HarnessError::InvalidSpec("sweep needs host counts and strategies".into()));
    }
    let jobs: Vec<(u32, Strategy)> = hosts
        .iter()
        .flat_map(|h| strategies.iter().map(move |s| (*h, *s)))
        .collect();
    jobs.par_iter()
        .map(|(h, s)| {
            let mut c = cfg.clone();
            c.hosts.count = *h;
            c.strategy = *s;
            run_config(&c, false).map(|r| r.metrics)
        })
        .collect()
}

/// Parses `a..b` into a doubling series from `a` up to and including `b`,
/// or `a..b/step` into an arithmetic one.
pub fn parse_host_range(text: &str) -> Result<Vec<u32>, HarnessError> {
    let bad = || HarnessError::InvalidSpec(format!("bad host range {text:?}, expected a..b or a..b/step"));
    let (range, step) = match text.split_once('/') {
        Some((r, s)) => (r, Some(s.trim().parse::<u32>().map_err(|_| bad())?)),
        None => (text, None),
    };
    let (a, b) = range.split_once("..").ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || a > b || step == Some(0) {
        return Err(bad());
    }
    let mut out = Vec::new();
    let mut n = a;
    while n <= b {
        out.push(n);
        n = match step {
            Some(s) => n + s,
            None => n * 2,
        };
    }
    if out.last() != Some(&b) {
        out.push(b);
    }
    Ok(out)
}

/// Writes `trace.jsonl`, `metrics.json` and `history.json` into `dir`.
pub fn write_artifacts(result: &RunResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("trace.jsonl"))?);
    trace::write_jsonl(&result.trace, &mut f)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&result.metrics)? + "\n")?;
    fs::write(dir.join("history.json"), serde_json::to_string(&result.history)? + "\n")?;
    Ok(())
}

pub fn load_history(path: &Path) -> Result<HistoryRecord, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_ranges() {
        assert_eq!(parse_host_range("2..64").unwrap(), [2, 4, 8, 16, 32, 64]);
        assert_eq!(parse_host_range("3..10").unwrap(), [3, 6, 10]);
        assert_eq!(parse_host_range("8..32/8").unwrap(), [8, 16, 24, 32]);
        assert_eq!(parse_host_range("4..=4").unwrap(), [4]);
        assert!(parse_host_range("0..4").is_err());
        assert!(parse_host_range("9..4").is_err());
        assert!(parse_host_range("4").is_err());
    }

    #[test]
    fn compare_needs_two_strategies() {
        let cfg = scenarios::banking_base();
        assert!(matches!(
            compare_strategies(&cfg, &[Strategy::MulticastRestart]),
            Err(HarnessError::InvalidSpec(_))
        ));
    }
}
