//! The TOML run configuration.
//!
//! ```toml
//! seed = 7
//! strategy = "multicast-restart"
//!
//! [[database.relations]]
//! name = "Account"
//! schema = ["Account_no", "Amount"]
//! rows = [[101, 10000], [102, 12300], [103, 11500]]
//!
//! [topology]
//! cells = 2
//!
//! [hosts]
//! count = 8
//!
//! [workload]
//! mean_interarrival_ms = 4000
//! duration_ms = 60000
//! keys = { kind = "hotspot", hot_keys = 1, skew = 0.8 }
//! ```
//!
//! Every section except the database has defaults. Without a `[[catalog]]`
//! the banking catalog (Deposit, Withdraw, Enquiry) is registered.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coordinator::{CoordinatorConfig, Strategy, TransactionInfoRegistry};
use crate::model::{BaseStationId, CellId, RowKey, SiteId, TransactionType, Value};
use crate::netsim::{Channel, Link, Outage};
use crate::sim::HostSetup;
use crate::store::{Relation, Store};

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub restart_cap: Option<u32>,
    #[serde(default = "default_broadcast_period")]
    pub broadcast_period_ms: u64,
    /// Fault injection: commit without comparing read versions.
    #[serde(default)]
    pub disable_validation: bool,
    pub database: DatabaseConfig,
    #[serde(default)]
    pub catalog: Vec<CatalogEntry>,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub links: LinksConfig,
    #[serde(default)]
    pub hosts: HostsConfig,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub disconnections: Vec<DisconnectionConfig>,
    #[serde(default)]
    pub moves: Vec<MoveConfig>,
}

fn default_strategy() -> Strategy {
    Strategy::MulticastRestart
}

fn default_broadcast_period() -> u64 {
    1000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseConfig {
    #[serde(default)]
    pub relations: Vec<RelationConfig>,
    /// A generated `Account` relation, added after the listed ones.
    #[serde(default)]
    pub accounts: Option<AccountsConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationConfig {
    pub name: String,
    pub schema: Vec<String>,
    pub rows: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountsConfig {
    pub count: u32,
    #[serde(default = "default_first_key")]
    pub first_key: RowKey,
    #[serde(default = "default_balance")]
    pub balance: Value,
}

fn default_first_key() -> RowKey {
    101
}

fn default_balance() -> Value {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub id: String,
    pub name: String,
    pub relation: String,
    pub items: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub cells: u32,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { cells: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirelessConfig {
    pub up_latency_ms: u64,
    pub up_bytes_per_ms: u64,
    pub down_latency_ms: u64,
    pub down_bytes_per_ms: u64,
}

impl Default for WirelessConfig {
    fn default() -> Self {
        WirelessConfig {
            up_latency_ms: 50,
            up_bytes_per_ms: 1,
            down_latency_ms: 50,
            down_bytes_per_ms: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub latency_ms: u64,
    pub bytes_per_ms: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            latency_ms: 5,
            bytes_per_ms: 1000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksConfig {
    #[serde(default)]
    pub wireless: WirelessConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostsConfig {
    pub count: u32,
    #[serde(default = "default_compute_delay")]
    pub compute_delay_ms: u64,
    /// Per-host overrides, by position; missing entries use the default.
    #[serde(default)]
    pub compute_delays_ms: Vec<u64>,
    /// Per-host starting cells, by position; missing entries are placed
    /// round-robin.
    #[serde(default)]
    pub cells: Vec<u32>,
}

fn default_compute_delay() -> u64 {
    crate::host::DEFAULT_COMPUTE_DELAY_MS
}

impl Default for HostsConfig {
    fn default() -> Self {
        HostsConfig {
            count: 2,
            compute_delay_ms: default_compute_delay(),
            compute_delays_ms: Vec::new(),
            cells: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KeyDistribution {
    Uniform,
    /// With probability `skew` pick one of the first `hot_keys` rows.
    Hotspot { hot_keys: u32, skew: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedArrival {
    pub at_ms: u64,
    pub site: u32,
    pub txn: String,
    pub row_key: RowKey,
    #[serde(default)]
    pub amount: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Weight per transaction type id.
    #[serde(default = "default_mix")]
    pub mix: BTreeMap<String, f64>,
    #[serde(default = "default_keys")]
    pub keys: KeyDistribution,
    /// Mean gap between arrivals at one host. Zero disables generation.
    #[serde(default = "default_interarrival")]
    pub mean_interarrival_ms: u64,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default = "default_duration")]
    pub duration_ms: u64,
    #[serde(default = "default_amount_min")]
    pub amount_min: Value,
    #[serde(default = "default_amount_max")]
    pub amount_max: Value,
    /// Only the first this many hosts draw arrivals; the rest stay idle.
    #[serde(default)]
    pub active_hosts: Option<u32>,
    #[serde(default)]
    pub scripted: Vec<ScriptedArrival>,
}

fn default_mix() -> BTreeMap<String, f64> {
    BTreeMap::from([("T1".into(), 2.0), ("T2".into(), 2.0), ("T3".into(), 1.0)])
}

fn default_keys() -> KeyDistribution {
    KeyDistribution::Uniform
}

fn default_interarrival() -> u64 {
    5000
}

fn default_duration() -> u64 {
    60_000
}

fn default_amount_min() -> Value {
    1
}

fn default_amount_max() -> Value {
    1000
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            mix: default_mix(),
            keys: default_keys(),
            mean_interarrival_ms: default_interarrival(),
            start_ms: 0,
            duration_ms: default_duration(),
            amount_min: default_amount_min(),
            amount_max: default_amount_max(),
            active_hosts: None,
            scripted: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisconnectionConfig {
    pub site: u32,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveConfig {
    pub site: u32,
    pub at_ms: u64,
    pub cell: u32,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.topology.cells == 0 {
            return invalid("topology.cells must be at least 1".into());
        }
        if self.hosts.count == 0 {
            return invalid("hosts.count must be at least 1".into());
        }
        let w = &self.links.wireless;
        if w.up_bytes_per_ms == 0 || w.down_bytes_per_ms == 0 || self.links.backbone.bytes_per_ms == 0 {
            return invalid("link rates must be positive".into());
        }
        if self.workload.amount_min > self.workload.amount_max {
            return invalid("workload.amount_min exceeds amount_max".into());
        }
        for d in &self.disconnections {
            self.check_site(d.site)?;
            if d.start_ms >= d.end_ms {
                return invalid(format!("empty disconnection window for M{}", d.site));
            }
        }
        for m in &self.moves {
            self.check_site(m.site)?;
            if m.cell == 0 || m.cell > self.topology.cells {
                return invalid(format!("move of M{} to unknown cell {}", m.site, m.cell));
            }
        }
        if let Some(c) = self.hosts.cells.iter().find(|c| **c == 0 || **c > self.topology.cells) {
            return invalid(format!("host placed in unknown cell {c}"));
        }
        for s in &self.workload.scripted {
            self.check_site(s.site)?;
        }
        Ok(())
    }

    fn check_site(&self, site: u32) -> Result<(), HarnessError> {
        if site == 0 || site > self.hosts.count {
            return Err(HarnessError::InvalidSpec(format!("no host M{site}")));
        }
        Ok(())
    }

    pub fn build_store(&self) -> Result<Store, HarnessError> {
        let mut relations = Vec::new();
        for r in &self.database.relations {
            let schema: Vec<&str> = r.schema.iter().map(String::as_str).collect();
            let rows = r.rows.iter().map(|row| {
                let (key, values) = row.split_first().map_or((0, &[][..]), |(k, v)| (*k, v));
                (key, values.to_vec())
            });
            relations.push(Relation::from_rows(r.name.clone(), &schema, rows)?);
        }
        if let Some(a) = &self.database.accounts {
            let rows = (0..a.count).map(|i| (a.first_key + RowKey::from(i), vec![a.balance]));
            relations.push(Relation::from_rows("Account", &["Account_no", "Amount"], rows)?);
        }
        if relations.is_empty() {
            return Err(HarnessError::InvalidSpec("database has no relations".into()));
        }
        Ok(Store::load_initial(relations)?)
    }

    pub fn build_registry(&self) -> Result<TransactionInfoRegistry, HarnessError> {
        if self.catalog.is_empty() {
            return Ok(TransactionInfoRegistry::banking());
        }
        Ok(TransactionInfoRegistry::from_types(self.catalog.iter().map(|c| {
            let items: Vec<&str> = c.items.iter().map(String::as_str).collect();
            TransactionType::new(c.id.clone(), c.name.clone(), c.relation.clone(), &items)
        }))?)
    }

    pub fn coordinator_config(&self) -> CoordinatorConfig {
        CoordinatorConfig {
            strategy: self.strategy,
            restart_cap: self.restart_cap,
            backward_validation: !self.disable_validation,
        }
    }

    pub fn base_stations(&self) -> Vec<BaseStationId> {
        (1..=self.topology.cells).map(BaseStationId).collect()
    }

    /// Hosts start in their configured cell, or round-robin: M1 in cell1,
    /// M2 in cell2, and so on.
    pub fn host_setups(&self) -> Vec<HostSetup> {
        (1..=self.hosts.count)
            .map(|i| {
                let site = SiteId(i);
                let outages = self
                    .disconnections
                    .iter()
                    .filter(|d| d.site == i)
                    .map(|d| Outage::new(d.start_ms, d.end_ms))
                    .collect();
                HostSetup {
                    site,
                    cell: CellId(
                        self.hosts
                            .cells
                            .get(i as usize - 1)
                            .copied()
                            .unwrap_or((i - 1) % self.topology.cells + 1),
                    ),
                    compute_delay_ms: self
                        .hosts
                        .compute_delays_ms
                        .get(i as usize - 1)
                        .copied()
                        .unwrap_or(self.hosts.compute_delay_ms),
                    outages,
                }
            })
            .collect()
    }

    pub fn wireless_link(&self) -> Result<Link, HarnessError> {
        let w = &self.links.wireless;
        Ok(Link::new(
            Channel::new(w.up_latency_ms, w.up_bytes_per_ms)?,
            Channel::new(w.down_latency_ms, w.down_bytes_per_ms)?,
        ))
    }

    pub fn backbone_link(&self) -> Result<Link, HarnessError> {
        let b = &self.links.backbone;
        Ok(Link::symmetric(Channel::new(b.latency_ms, b.bytes_per_ms)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[database.relations]]
        name = "Account"
        schema = ["Account_no", "Amount"]
        rows = [[101, 10000], [102, 12300], [103, 11500]]
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = Config::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.strategy, Strategy::MulticastRestart);
        assert_eq!(cfg.topology.cells, 1);
        assert_eq!(cfg.links.wireless.down_bytes_per_ms, 8);
        let store = cfg.build_store().unwrap();
        assert_eq!(store.items().len(), 3);
        assert_eq!(cfg.build_registry().unwrap().len(), 3);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::from_toml(MINIMAL).unwrap();
        cfg.workload.keys = KeyDistribution::Hotspot {
            hot_keys: 1,
            skew: 0.5,
        };
        cfg.moves.push(MoveConfig {
            site: 1,
            at_ms: 10,
            cell: 1,
        });
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = format!("{MINIMAL}\n[links.backbone]\nlatency_ms = 1\nbytes_per_ms = 0\n");
        assert!(matches!(Config::from_toml(&bad), Err(HarnessError::InvalidSpec(_))));
        let bad = format!("{MINIMAL}\n[[disconnections]]\nsite = 9\nstart_ms = 0\nend_ms = 5\n");
        assert!(matches!(Config::from_toml(&bad), Err(HarnessError::InvalidSpec(_))));
        assert!(Config::from_toml("seed = 1").is_err());
        assert!(Config::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn hosts_round_robin_over_cells() {
        let mut cfg = Config::from_toml(MINIMAL).unwrap();
        cfg.topology.cells = 2;
        cfg.hosts.count = 3;
        cfg.hosts.compute_delays_ms = vec![7];
        let hs = cfg.host_setups();
        assert_eq!(hs.iter().map(|h| h.cell.0).collect::<Vec<_>>(), [1, 2, 1]);
        assert_eq!(hs[0].compute_delay_ms, 7);
        assert_eq!(hs[1].compute_delay_ms, 1000);
    }
}
