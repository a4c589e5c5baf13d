//! Seeded workload generation.
//!
//! Each host draws its own stream of arrivals with exponential gaps. All
//! randomness comes from one ChaCha8 generator seeded from the config, and
//! hosts are drawn in site order, so a config and seed fix the workload.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::model::{Params, RowKey, SiteId, Timestamp, TxnTypeId};
use crate::netsim::Arrival;

use super::config::{Config, KeyDistribution};
use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimedArrival {
    pub at: Timestamp,
    pub arrival: Arrival,
}

/// The workload for `cfg` over the given row keys, ordered by time then site.
pub fn generate_workload(cfg: &Config, keys: &[RowKey]) -> Result<Vec<TimedArrival>, HarnessError> {
    let w = &cfg.workload;
    let mut out: Vec<TimedArrival> = w
        .scripted
        .iter()
        .map(|s| TimedArrival {
            at: Timestamp(s.at_ms),
            arrival: Arrival {
                site: SiteId(s.site),
                txn_type_id: TxnTypeId::new(s.txn.clone()),
                params: Params::new(s.row_key, s.amount),
            },
        })
        .collect();

    if w.mean_interarrival_ms > 0 && w.duration_ms > 0 {
        if keys.is_empty() {
            return Err(HarnessError::InvalidSpec("no row keys to draw from".into()));
        }
        let (types, weights): (Vec<&String>, Vec<f64>) = w.mix.iter().map(|(k, v)| (k, *v)).unzip();
        if weights.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(HarnessError::InvalidSpec("mix weights must be non-negative".into()));
        }
        let mix = WeightedIndex::new(&weights)
            .map_err(|e| HarnessError::InvalidSpec(format!("transaction mix: {e}")))?;
        let gap = Exp::new(1.0 / w.mean_interarrival_ms as f64)
            .map_err(|e| HarnessError::InvalidSpec(format!("inter-arrival: {e}")))?;
        let hot = match w.keys {
            KeyDistribution::Uniform => None,
            KeyDistribution::Hotspot { hot_keys, skew } => {
                if hot_keys == 0 || !(0.0..=1.0).contains(&skew) {
                    return Err(HarnessError::InvalidSpec(
                        "hotspot needs hot_keys >= 1 and skew in [0, 1]".into(),
                    ));
                }
                Some((hot_keys.min(keys.len() as u32) as usize, skew))
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let end = w.start_ms.saturating_add(w.duration_ms);
        let active = w.active_hosts.map_or(cfg.hosts.count, |n| n.min(cfg.hosts.count));
        for site in 1..=active {
            let mut t = w.start_ms as f64;
            loop {
                t += gap.sample(&mut rng);
                let at = t.round() as u64;
                if at >= end {
                    break;
                }
                let ty = types[mix.sample(&mut rng)];
                let key = match hot {
                    Some((n, skew)) if rng.random_bool(skew) => keys[rng.random_range(0..n)],
                    _ => keys[rng.random_range(0..keys.len())],
                };
                let amount = rng.random_range(w.amount_min..=w.amount_max);
                out.push(TimedArrival {
                    at: Timestamp(at),
                    arrival: Arrival {
                        site: SiteId(site),
                        txn_type_id: TxnTypeId::new(ty.clone()),
                        params: Params::new(key, amount),
                    },
                });
            }
        }
    }
    out.sort_by_key(|a| (a.at, a.arrival.site));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Config;
    use std::collections::BTreeMap;

    fn config(seed: u64) -> Config {
        let mut cfg = Config::from_toml("[database.accounts]\ncount = 20").unwrap();
        cfg.seed = seed;
        cfg.hosts.count = 4;
        cfg.workload.mean_interarrival_ms = 1000;
        cfg.workload.duration_ms = 30_000;
        cfg
    }

    fn keys() -> Vec<RowKey> {
        (101..121).collect()
    }

    #[test]
    fn same_seed_same_workload() {
        let a = generate_workload(&config(42), &keys()).unwrap();
        let b = generate_workload(&config(42), &keys()).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert_ne!(a, generate_workload(&config(43), &keys()).unwrap());
        assert!(a.windows(2).all(|p| p[0].at <= p[1].at));
    }

    #[test]
    fn enquiry_only_mix() {
        let mut cfg = config(1);
        cfg.workload.mix = BTreeMap::from([("T1".into(), 0.0), ("T3".into(), 1.0)]);
        let w = generate_workload(&cfg, &keys()).unwrap();
        assert!(w.iter().all(|a| a.arrival.txn_type_id.as_str() == "T3"));
    }

    #[test]
    fn full_skew_hits_one_row() {
        let mut cfg = config(3);
        cfg.workload.keys = KeyDistribution::Hotspot {
            hot_keys: 1,
            skew: 1.0,
        };
        let w = generate_workload(&cfg, &keys()).unwrap();
        assert!(w.iter().all(|a| a.arrival.params.row_key == 101));
    }

    #[test]
    fn idle_hosts_draw_nothing() {
        let mut cfg = config(5);
        cfg.workload.active_hosts = Some(2);
        let w = generate_workload(&cfg, &keys()).unwrap();
        assert!(w.iter().all(|a| a.arrival.site.0 <= 2));
        assert!(w.iter().any(|a| a.arrival.site.0 == 2));
    }

    #[test]
    fn invalid_mixes_are_rejected() {
        let mut cfg = config(1);
        cfg.workload.mix = BTreeMap::from([("T1".into(), 0.0)]);
        assert!(matches!(generate_workload(&cfg, &keys()), Err(HarnessError::InvalidSpec(_))));
        cfg.workload.mix = BTreeMap::from([("T1".into(), -1.0), ("T2".into(), 2.0)]);
        assert!(matches!(generate_workload(&cfg, &keys()), Err(HarnessError::InvalidSpec(_))));
    }
}
