//! The simulated world: one store, a coordinator per base station, the
//! mobile hosts and the network, driven by a single event queue.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{
    Coordinator, CoordinatorConfig, CoordinatorError, Decision, Route, Strategy,
    TransactionInfoRegistry,
};
use crate::host::{HostConfig, HostError, HostEvent, HostOutput, MobileHost, Outcome};
use crate::logic::TransactionLogic;
use crate::message::{Actor, Envelope, Message};
use crate::model::{BaseStationId, CellId, InstanceId, SiteId, Timestamp};
use crate::netsim::{Arrival, EventKind, EventQueue, Link, NetError, Network, Outage, TrafficCounters};
use crate::store::Store;
use crate::trace::TraceRecord;
use crate::verify::Intent;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("no host {0}")]
    UnknownSite(SiteId),
    #[error("no base station {0}")]
    UnknownBaseStation(BaseStationId),
    #[error("transaction catalog entry {0:?} has no known operation")]
    UnknownOperation(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostSetup {
    pub site: SiteId,
    pub cell: CellId,
    pub compute_delay_ms: u64,
    /// Windows during which the host is disconnected.
    pub outages: Vec<Outage>,
}

#[derive(Clone, Debug)]
pub struct WorldSetup {
    pub store: Store,
    pub registry: TransactionInfoRegistry,
    pub coordinator: CoordinatorConfig,
    pub base_stations: Vec<BaseStationId>,
    pub hosts: Vec<HostSetup>,
    pub wireless: Link,
    pub backbone: Link,
    /// Invalidation period for the broadcast baseline.
    pub broadcast_period_ms: u64,
    pub record_trace: bool,
}

/// Counters gathered while the world runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub began: u64,
    pub committed: u64,
    pub locally_failed: u64,
    pub aborted: u64,
    pub starved: u64,
    /// Re-executions, whatever caused them.
    pub restarts: u64,
    /// Restarts that went back to the base station for data.
    pub refetch_restarts: u64,
    /// Data requests sent for an instance that had already been served.
    pub restart_uplink_messages: u64,
    pub restart_uplink_bytes: u64,
    pub update_reports: u64,
    pub validation_restarts: u64,
    pub stale_reports: u64,
    pub conflict_notices: u64,
    pub refetch_notices: u64,
    pub invalidations: u64,
    pub forwards: u64,
    pub orphans: u64,
    pub anomalies: u64,
    pub deferred_arrivals: u64,
    pub events: u64,
    pub commit_latencies_ms: Vec<u64>,
}

pub struct World {
    store: Store,
    coordinators: BTreeMap<BaseStationId, Coordinator>,
    hosts: BTreeMap<SiteId, MobileHost>,
    queue: EventQueue<EventKind>,
    network: Network,
    strategy: Strategy,
    broadcast_period_ms: u64,
    intents: BTreeMap<InstanceId, Intent>,
    requested: BTreeSet<InstanceId>,
    deferred: BTreeMap<SiteId, Vec<Arrival>>,
    next_instance: u64,
    stats: RunStats,
    record_trace: bool,
    trace: Vec<TraceRecord>,
}

impl World {
    pub fn new(setup: WorldSetup) -> Result<Self, SimError> {
        let logic = TransactionLogic::from_registry(&setup.registry)
            .map_err(|t| SimError::UnknownOperation(t.name))?;
        let mut network = Network::new(setup.wireless, setup.backbone);
        let mut queue = EventQueue::new();
        let coordinators: BTreeMap<_, _> = setup
            .base_stations
            .iter()
            .map(|bs| (*bs, Coordinator::new(*bs, setup.coordinator, setup.registry.clone())))
            .collect();
        let mut hosts = BTreeMap::new();
        for h in &setup.hosts {
            if !coordinators.contains_key(&h.cell.base_station()) {
                return Err(SimError::UnknownBaseStation(h.cell.base_station()));
            }
            let config = HostConfig {
                compute_delay_ms: h.compute_delay_ms,
                restart_cap: setup.coordinator.restart_cap,
                strategy: setup.coordinator.strategy,
            };
            hosts.insert(h.site, MobileHost::new(h.site, h.cell, config, logic.clone()));
            network.set_outages(h.site, h.outages.clone());
            for o in &h.outages {
                queue.schedule(
                    o.start,
                    EventKind::ConnectivityChange { site: h.site, connected: false },
                )?;
                queue.schedule(
                    o.end,
                    EventKind::ConnectivityChange { site: h.site, connected: true },
                )?;
            }
        }
        if setup.coordinator.strategy == Strategy::BroadcastInvalidate {
            let period = setup.broadcast_period_ms.max(1);
            for bs in coordinators.keys() {
                queue.schedule(Timestamp(period), EventKind::BroadcastTick { base_station: *bs })?;
            }
        }
        Ok(World {
            store: setup.store,
            coordinators,
            hosts,
            queue,
            network,
            strategy: setup.coordinator.strategy,
            broadcast_period_ms: setup.broadcast_period_ms.max(1),
            intents: BTreeMap::new(),
            requested: BTreeSet::new(),
            deferred: BTreeMap::new(),
            next_instance: 1,
            stats: RunStats::default(),
            record_trace: setup.record_trace,
            trace: Vec::new(),
        })
    }

    pub fn now(&self) -> Timestamp {
        self.queue.now()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn host(&self, site: SiteId) -> Option<&MobileHost> {
        self.hosts.get(&site)
    }

    pub fn hosts(&self) -> impl Iterator<Item = &MobileHost> {
        self.hosts.values()
    }

    pub fn coordinator(&self, bs: BaseStationId) -> Option<&Coordinator> {
        self.coordinators.get(&bs)
    }

    pub fn intents(&self) -> &BTreeMap<InstanceId, Intent> {
        &self.intents
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn traffic(&self) -> &TrafficCounters {
        self.network.counters()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }

    /// Outcome of every finished instance.
    pub fn outcomes(&self) -> BTreeMap<InstanceId, Outcome> {
        self.hosts
            .values()
            .flat_map(|h| h.finished().iter().map(|(id, f)| (*id, f.outcome)))
            .collect()
    }

    /// Instances begun but not finished.
    pub fn in_flight(&self) -> usize {
        self.hosts.values().map(|h| h.active().len()).sum()
    }

    pub fn schedule_arrival(&mut self, at: Timestamp, arrival: Arrival) -> Result<(), SimError> {
        if !self.hosts.contains_key(&arrival.site) {
            return Err(SimError::UnknownSite(arrival.site));
        }
        self.queue.schedule(at, EventKind::WorkloadArrival(arrival))?;
        Ok(())
    }

    pub fn schedule_move(&mut self, at: Timestamp, site: SiteId, cell: CellId) -> Result<(), SimError> {
        if !self.hosts.contains_key(&site) {
            return Err(SimError::UnknownSite(site));
        }
        if !self.coordinators.contains_key(&cell.base_station()) {
            return Err(SimError::UnknownBaseStation(cell.base_station()));
        }
        self.queue.schedule(at, EventKind::CellMove { site, cell })?;
        Ok(())
    }

    /// Runs until the queue is empty or the next event lies beyond `until`.
    pub fn run_until(&mut self, until: Option<Timestamp>) -> Result<(), SimError> {
        while let Some(t) = self.queue.peek_time() {
            if until.is_some_and(|u| t > u) {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), SimError> {
        self.run_until(None)
    }

    /// Handles the next event. Returns false when the queue is empty.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(ev) = self.queue.pop() else {
            return Ok(false);
        };
        self.stats.events += 1;
        let now = ev.fire_at;
        match ev.event {
            EventKind::MessageDelivery(env) => match env.to {
                Actor::BaseStation(bs) => {
                    let to = env.to;
                    let mut batch = vec![env];
                    batch.extend(
                        self.queue
                            .drain_at(now, |e| matches!(e, EventKind::MessageDelivery(x) if x.to == to))
                            .into_iter()
                            .map(|s| match s.event {
                                EventKind::MessageDelivery(e) => e,
                                _ => unreachable!("filtered to deliveries"),
                            }),
                    );
                    self.deliver_to_base_station(bs, batch, now)?;
                }
                Actor::Host(site) => self.deliver_to_host(site, env, now)?,
            },
            EventKind::ComputeDone { site, instance, epoch } => {
                let out = self.host_mut(site)?.on_compute_done(instance, epoch, now)?;
                self.apply_host_output(site, out, now)?;
            }
            EventKind::ConnectivityChange { site, connected } => {
                self.record(now, "connectivity", site, None, if connected { "up" } else { "down" });
                let out = self.host_mut(site)?.set_connectivity(connected, now);
                self.apply_host_output(site, out, now)?;
                if connected {
                    for a in self.deferred.remove(&site).unwrap_or_default() {
                        self.begin(a, now)?;
                    }
                }
            }
            EventKind::CellMove { site, cell } => {
                self.record(now, "cell_move", site, None, cell.to_string());
                let out = self.host_mut(site)?.move_cell(cell, now);
                self.apply_host_output(site, out, now)?;
            }
            EventKind::BroadcastTick { base_station } => self.broadcast_tick(base_station, now)?,
            EventKind::WorkloadArrival(a) => {
                let connected = self
                    .hosts
                    .get(&a.site)
                    .ok_or(SimError::UnknownSite(a.site))?
                    .is_connected();
                if connected {
                    self.begin(a, now)?;
                } else {
                    self.stats.deferred_arrivals += 1;
                    self.record(now, "deferred", a.site, None, a.txn_type_id.as_str());
                    self.deferred.entry(a.site).or_default().push(a);
                }
            }
        }
        Ok(true)
    }

    fn host_mut(&mut self, site: SiteId) -> Result<&mut MobileHost, SimError> {
        self.hosts.get_mut(&site).ok_or(SimError::UnknownSite(site))
    }

    fn begin(&mut self, a: Arrival, now: Timestamp) -> Result<(), SimError> {
        let id = InstanceId(self.next_instance);
        self.next_instance += 1;
        self.intents.insert(
            id,
            Intent {
                site: a.site,
                txn_type_id: a.txn_type_id.clone(),
                params: a.params,
            },
        );
        let out = self
            .host_mut(a.site)?
            .begin_transaction(id, a.txn_type_id, a.params, now)?;
        self.apply_host_output(a.site, out, now)
    }

    fn deliver_to_host(&mut self, site: SiteId, env: Envelope, now: Timestamp) -> Result<(), SimError> {
        if self.record_trace {
            let detail = format!("{} from {} ({} B)", env.message.kind(), env.from, env.size_bytes());
            self.record(now, "deliver", site, env.message.instance_id(), detail);
        }
        if matches!(env.message, Message::Invalidation(_)) {
            self.stats.invalidations += 1;
        }
        let out = self.host_mut(site)?.on_message(env.message, now)?;
        self.apply_host_output(site, out, now)
    }

    fn deliver_to_base_station(
        &mut self,
        bs: BaseStationId,
        batch: Vec<Envelope>,
        now: Timestamp,
    ) -> Result<(), SimError> {
        if self.record_trace {
            for env in &batch {
                let detail = format!("{} from {} ({} B)", env.message.kind(), env.from, env.size_bytes());
                self.record(now, "deliver", bs, env.message.instance_id(), detail);
            }
        }
        let coord = self
            .coordinators
            .get_mut(&bs)
            .ok_or(SimError::UnknownBaseStation(bs))?;
        let out = coord.on_deliveries(&mut self.store, batch, now)?;
        for d in &out.decisions {
            self.note_decision(bs, d, now);
        }
        for env in out.sends {
            self.send(env, now)?;
        }
        Ok(())
    }

    fn broadcast_tick(&mut self, bs: BaseStationId, now: Timestamp) -> Result<(), SimError> {
        let registered: Vec<SiteId> = self
            .hosts
            .values()
            .filter(|h| h.cell().base_station() == bs)
            .map(|h| h.site())
            .collect();
        let coord = self
            .coordinators
            .get_mut(&bs)
            .ok_or(SimError::UnknownBaseStation(bs))?;
        let sends = coord.broadcast_tick(&self.store, &registered, now);
        if !sends.is_empty() {
            let d = Decision::Broadcast {
                items: match &sends[0].message {
                    Message::Invalidation(i) => i.items.len(),
                    _ => 0,
                },
                hosts: sends.len(),
            };
            self.note_decision(bs, &d, now);
        }
        for env in sends {
            self.send(env, now)?;
        }
        let more = self
            .queue
            .iter()
            .any(|e| !matches!(e, EventKind::BroadcastTick { .. }));
        if more && self.strategy == Strategy::BroadcastInvalidate {
            self.queue.schedule(
                now.after(self.broadcast_period_ms),
                EventKind::BroadcastTick { base_station: bs },
            )?;
        }
        Ok(())
    }

    fn send(&mut self, env: Envelope, now: Timestamp) -> Result<(), SimError> {
        if let (Actor::Host(_), Message::DataRequest(req)) = (env.from, &env.message) {
            if !self.requested.insert(req.instance_id) {
                self.stats.restart_uplink_messages += 1;
                self.stats.restart_uplink_bytes += env.size_bytes();
            }
        }
        let detail = self
            .record_trace
            .then(|| format!("{} to {} ({} B)", env.message.kind(), env.to, env.size_bytes()));
        let (from, instance) = (env.from, env.message.instance_id());
        let at = self.network.send(&mut self.queue, env, now)?;
        if let Some(d) = detail {
            self.record(now, "send", from, instance, format!("{d} arrives {}", at.ms()));
        }
        Ok(())
    }

    fn apply_host_output(&mut self, site: SiteId, out: HostOutput, now: Timestamp) -> Result<(), SimError> {
        for e in &out.events {
            self.note_host_event(site, e, now);
        }
        for job in out.compute {
            self.queue.schedule(
                now.after(job.delay_ms),
                EventKind::ComputeDone {
                    site,
                    instance: job.instance,
                    epoch: job.epoch,
                },
            )?;
        }
        for env in out.sends {
            self.send(env, now)?;
        }
        Ok(())
    }

    fn note_host_event(&mut self, site: SiteId, e: &HostEvent, now: Timestamp) {
        let s = &mut self.stats;
        let (kind, instance, detail) = match e {
            HostEvent::Began { instance } => {
                s.began += 1;
                ("began", *instance, String::new())
            }
            HostEvent::Executed { instance, restart } => ("executed", *instance, format!("epoch {restart}")),
            HostEvent::LocallyCommitted { instance } => ("locally_committed", *instance, String::new()),
            HostEvent::LocallyFailed { instance, reason } => {
                s.locally_failed += 1;
                ("locally_failed", *instance, reason.clone())
            }
            HostEvent::Restarted {
                instance,
                restart_count,
                refetch,
            } => {
                s.restarts += 1;
                if *refetch {
                    s.refetch_restarts += 1;
                }
                let how = if *refetch { "refetch" } else { "in place" };
                ("restarted", *instance, format!("#{restart_count} {how}"))
            }
            HostEvent::Starved { instance } => {
                s.starved += 1;
                ("starved", *instance, String::new())
            }
            HostEvent::Committed {
                instance,
                commit_seq,
                latency_ms,
            } => {
                s.committed += 1;
                s.commit_latencies_ms.push(*latency_ms);
                ("committed", *instance, format!("seq {commit_seq} latency {latency_ms}"))
            }
            HostEvent::Aborted { instance } => {
                s.aborted += 1;
                ("aborted", *instance, String::new())
            }
            HostEvent::StaleReport { instance } => {
                s.stale_reports += 1;
                ("stale_report", *instance, String::new())
            }
            HostEvent::ConflictNotice { instance, earliest } => {
                s.conflict_notices += 1;
                ("conflict_notice", *instance, format!("earliest {}", earliest.ms()))
            }
            HostEvent::Anomaly { instance, detail } => {
                s.anomalies += 1;
                ("anomaly", *instance, detail.clone())
            }
        };
        self.record(now, kind, site, Some(instance), detail);
    }

    fn note_decision(&mut self, bs: BaseStationId, d: &Decision, now: Timestamp) {
        let s = &mut self.stats;
        let (kind, instance, detail) = match d {
            Decision::Conflict { instance, site, earliest } => {
                ("conflict", Some(*instance), format!("{site} earliest {}", earliest.ms()))
            }
            Decision::Commit {
                instance,
                site,
                commit_seq,
            } => ("commit", Some(*instance), format!("{site} seq {commit_seq}")),
            Decision::Multicast {
                instance,
                site,
                writer,
                withdrawn,
            } => {
                s.update_reports += 1;
                let w = if *withdrawn { " withdrawn" } else { "" };
                ("multicast", Some(*instance), format!("{site} after {writer}{w}"))
            }
            Decision::Restart {
                instance,
                site,
                withdrawn,
            } => {
                s.validation_restarts += 1;
                let w = if *withdrawn { " withdrawn" } else { "" };
                ("validation_restart", Some(*instance), format!("{site}{w}"))
            }
            Decision::Abort { instance, site } => ("abort", Some(*instance), site.to_string()),
            Decision::Refetch { instance, site } => {
                s.refetch_notices += 1;
                ("refetch", Some(*instance), site.to_string())
            }
            Decision::Forward { instance, to, kind } => {
                s.forwards += 1;
                ("forward", Some(*instance), format!("{kind} to {to}"))
            }
            Decision::Route { instance, route } => {
                let r = match route {
                    Route::Direct => "direct".to_string(),
                    Route::Via(b) => format!("via {b}"),
                };
                ("route", Some(*instance), r)
            }
            Decision::Broadcast { items, hosts } => {
                ("broadcast", None, format!("{items} items to {hosts} hosts"))
            }
            Decision::Orphan { instance, site } => {
                s.orphans += 1;
                ("orphan", Some(*instance), site.to_string())
            }
        };
        self.record(now, kind, bs, instance, detail);
    }

    fn record(
        &mut self,
        now: Timestamp,
        kind: &str,
        actor: impl ToString,
        instance: Option<InstanceId>,
        detail: impl Into<String>,
    ) {
        if self.record_trace {
            self.trace
                .push(TraceRecord::new(now.ms(), kind, actor, instance.map(|i| i.0), detail));
        }
    }
}
