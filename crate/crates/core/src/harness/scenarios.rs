//! Built-in scripted scenarios over the three-account banking database.
//!
//! Two hosts work on account 103 (balance 11500): M1 deposits 1000 and M2
//! withdraws 500. Start times are chosen so that their data requests reach
//! the base station at 605000 ms and 610000 ms, which become the arrival
//! times recorded in the coordinator's table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::message::{DataRequest, Message};
use crate::model::{InstanceId, TxnTypeId};

use super::config::{
    Config, DatabaseConfig, DisconnectionConfig, HostsConfig, MoveConfig, RelationConfig,
    ScriptedArrival, TopologyConfig, WorkloadConfig,
};

pub const BUILTINS: [&str; 5] = [
    "banking-case-i",
    "banking-case-ii",
    "banking-case-iii",
    "banking-handoff",
    "banking-disconnect",
];

pub const M1_ARRIVAL_MS: u64 = 605_000;
pub const M2_ARRIVAL_MS: u64 = 610_000;

/// Uplink time of a banking data request under the default wireless link.
pub fn request_transit_ms(cfg: &Config) -> u64 {
    let size = Message::DataRequest(DataRequest {
        instance_id: InstanceId(0),
        txn_type_id: TxnTypeId::new("T1"),
        row_key: 0,
    })
    .size_bytes();
    let w = &cfg.links.wireless;
    w.up_latency_ms + size.div_ceil(w.up_bytes_per_ms)
}

pub fn banking_base() -> Config {
    let mut cfg = Config {
        seed: 0,
        strategy: crate::coordinator::Strategy::MulticastRestart,
        restart_cap: None,
        broadcast_period_ms: 1000,
        disable_validation: false,
        database: DatabaseConfig {
            relations: vec![RelationConfig {
                name: "Account".into(),
                schema: vec!["Account_no".into(), "Amount".into()],
                rows: vec![vec![101, 10000], vec![102, 12300], vec![103, 11500]],
            }],
            accounts: None,
        },
        catalog: Vec::new(),
        topology: TopologyConfig { cells: 1 },
        links: Default::default(),
        hosts: HostsConfig {
            count: 2,
            ..Default::default()
        },
        workload: WorkloadConfig {
            mean_interarrival_ms: 0,
            ..Default::default()
        },
        disconnections: Vec::new(),
        moves: Vec::new(),
    };
    let lead = request_transit_ms(&cfg);
    cfg.workload.scripted = vec![
        ScriptedArrival {
            at_ms: M1_ARRIVAL_MS - lead,
            site: 1,
            txn: "T1".into(),
            row_key: 103,
            amount: 1000,
        },
        ScriptedArrival {
            at_ms: M2_ARRIVAL_MS - lead,
            site: 2,
            txn: "T2".into(),
            row_key: 103,
            amount: 500,
        },
    ];
    cfg
}

/// A built-in scenario by name. Only `banking-disconnect` depends on the
/// seed: it decides whether M2 touches M1's account while M1 is offline.
pub fn builtin(name: &str, seed: u64) -> Option<Config> {
    let mut cfg = banking_base();
    cfg.seed = seed;
    match name {
        // M1 computes faster and commits first.
        "banking-case-i" => cfg.hosts.compute_delays_ms = vec![10_000, 20_000],
        // M2 computes faster and commits first.
        "banking-case-ii" => cfg.hosts.compute_delays_ms = vec![30_000, 5_000],
        // Both commit requests reach the base station in the same tick.
        "banking-case-iii" => {
            let gap = M2_ARRIVAL_MS - M1_ARRIVAL_MS;
            cfg.hosts.compute_delays_ms = vec![20_000 + gap, 20_000];
        }
        // M1 moves to cell2 while executing; M2 stays in cell1.
        "banking-handoff" => {
            cfg.topology.cells = 2;
            cfg.hosts.cells = vec![1, 1];
            cfg.hosts.compute_delays_ms = vec![10_000, 20_000];
            cfg.moves.push(MoveConfig {
                site: 1,
                at_ms: M1_ARRIVAL_MS + 2_000,
                cell: 2,
            });
        }
        // M1 goes offline while executing and comes back much later. M2
        // either withdraws from the same account meanwhile or from another.
        "banking-disconnect" => {
            cfg.hosts.compute_delays_ms = vec![10_000, 5_000];
            cfg.disconnections.push(DisconnectionConfig {
                site: 1,
                start_ms: M1_ARRIVAL_MS + 1_000,
                end_ms: M1_ARRIVAL_MS + 35_000,
            });
            if !disconnect_conflicts(seed) {
                cfg.workload.scripted[1].row_key = 101;
            }
        }
        _ => return None,
    }
    Some(cfg)
}

/// Whether `banking-disconnect` under `seed` has M2 write M1's account.
pub fn disconnect_conflicts(seed: u64) -> bool {
    ChaCha8Rng::seed_from_u64(seed).random_bool(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_exist_and_validate() {
        for name in BUILTINS {
            let cfg = builtin(name, 0).unwrap();
            cfg.validate().unwrap();
        }
        assert!(builtin("nope", 0).is_none());
    }

    #[test]
    fn requests_reach_the_station_at_the_documented_times() {
        let cfg = banking_base();
        assert_eq!(request_transit_ms(&cfg), 78);
        assert_eq!(cfg.workload.scripted[0].at_ms + 78, 605_000);
        assert_eq!(cfg.workload.scripted[1].at_ms + 78, 610_000);
    }
}
