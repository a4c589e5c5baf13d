use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coordinator::Strategy;
use crate::host::Outcome;
use crate::model::InstanceId;
use crate::netsim::TrafficCounters;
use crate::sim::RunStats;
use crate::verify::Verdict;

/// Summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: Strategy,
    pub seed: u64,
    pub hosts: u32,
    pub began: u64,
    pub committed: u64,
    pub restarted: u64,
    pub aborted: u64,
    pub locally_failed: u64,
    pub starved: u64,
    pub in_flight: u64,
    pub stale_reports: u64,
    pub update_reports: u64,
    pub refetch_restarts: u64,
    pub orphans: u64,
    pub anomalies: u64,
    pub uplink_messages: u64,
    pub downlink_messages: u64,
    pub backbone_messages: u64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub backbone_bytes: u64,
    pub restart_uplink_messages: u64,
    /// Data re-requests per restart; zero when no restart happened.
    pub uplink_per_restart: f64,
    pub latency_mean_ms: f64,
    pub latency_median_ms: f64,
    pub latency_p95_ms: f64,
    /// Commits per simulated second.
    pub throughput: f64,
    pub sim_end_ms: u64,
    pub verdict: Verdict,
}

impl RunMetrics {
    pub fn new(
        strategy: Strategy,
        seed: u64,
        hosts: u32,
        stats: &RunStats,
        traffic: &TrafficCounters,
        in_flight: usize,
        sim_end_ms: u64,
        verdict: Verdict,
    ) -> Self {
        let lat = &stats.commit_latencies_ms;
        RunMetrics {
            strategy,
            seed,
            hosts,
            began: stats.began,
            committed: stats.committed,
            restarted: stats.restarts,
            aborted: stats.aborted,
            locally_failed: stats.locally_failed,
            starved: stats.starved,
            in_flight: in_flight as u64,
            stale_reports: stats.stale_reports,
            update_reports: stats.update_reports,
            refetch_restarts: stats.refetch_restarts,
            orphans: stats.orphans,
            anomalies: stats.anomalies,
            uplink_messages: traffic.uplink_messages,
            downlink_messages: traffic.downlink_messages,
            backbone_messages: traffic.backbone_messages,
            uplink_bytes: traffic.uplink_bytes,
            downlink_bytes: traffic.downlink_bytes,
            backbone_bytes: traffic.backbone_bytes,
            restart_uplink_messages: stats.restart_uplink_messages,
            uplink_per_restart: if stats.restarts == 0 {
                0.0
            } else {
                stats.restart_uplink_messages as f64 / stats.restarts as f64
            },
            latency_mean_ms: mean(lat),
            latency_median_ms: median(lat),
            latency_p95_ms: percentile(lat, 95),
            throughput: if sim_end_ms == 0 {
                0.0
            } else {
                stats.committed as f64 * 1000.0 / sim_end_ms as f64
            },
            sim_end_ms,
            verdict,
        }
    }

    pub fn terminal(&self) -> u64 {
        self.committed + self.starved + self.locally_failed + self.aborted
    }

    /// Terminal outcomes add up to the instances that reached one.
    pub fn terminal_identity_holds(&self, outcomes: &BTreeMap<InstanceId, Outcome>) -> bool {
        self.terminal() == outcomes.len() as u64 && self.terminal() + self.in_flight == self.began
    }

    pub fn total_bytes(&self) -> u64 {
        self.uplink_bytes + self.downlink_bytes + self.backbone_bytes
    }

    pub const CSV_HEADER: &'static str = "strategy,seed,hosts,began,committed,restarted,aborted,locally_failed,starved,in_flight,stale_reports,update_reports,uplink_messages,downlink_messages,backbone_messages,uplink_bytes,downlink_bytes,backbone_bytes,restart_uplink_messages,uplink_per_restart,latency_mean_ms,latency_median_ms,latency_p95_ms,throughput,serializable";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.4},{:.1},{:.1},{:.1},{:.4},{}",
            self.strategy,
            self.seed,
            self.hosts,
            self.began,
            self.committed,
            self.restarted,
            self.aborted,
            self.locally_failed,
            self.starved,
            self.in_flight,
            self.stale_reports,
            self.update_reports,
            self.uplink_messages,
            self.downlink_messages,
            self.backbone_messages,
            self.uplink_bytes,
            self.downlink_bytes,
            self.backbone_bytes,
            self.restart_uplink_messages,
            self.uplink_per_restart,
            self.latency_mean_ms,
            self.latency_median_ms,
            self.latency_p95_ms,
            self.throughput,
            self.verdict.passed(),
        )
    }
}

pub fn csv_table(rows: &[RunMetrics]) -> String {
    let mut out = String::from(RunMetrics::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn mean(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<u64>() as f64 / xs.len() as f64
}

fn sorted(xs: &[u64]) -> Vec<u64> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v
}

fn median(xs: &[u64]) -> f64 {
    let v = sorted(xs);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

/// Nearest-rank percentile.
fn percentile(xs: &[u64], p: u32) -> f64 {
    let v = sorted(xs);
    if v.is_empty() {
        return 0.0;
    }
    let rank = (p as usize * v.len()).div_ceil(100).max(1);
    v[rank - 1] as f64
}
