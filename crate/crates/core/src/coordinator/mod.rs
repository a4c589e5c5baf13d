//! The base-station coordinator.
//!
//! A coordinator serves data requests for the transactions started in its
//! cell, records them in its current-transactions table, validates commit
//! requests backward against the DBS versions, and resolves conflicts
//! according to the run's [`Strategy`]. Under [`Strategy::MulticastRestart`]
//! a conflicting in-flight transaction is never aborted: the coordinator
//! pushes it the fresh values and it re-executes.
//!
//! Commit authority stays with the base station where a transaction began
//! (its coordinator of record). When the host changes cells the new base
//! station keeps a forwarding entry and relays traffic in both directions.

mod table;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use table::{CurrentTransactionsTable, CurrentTxnRow, TransactionInfoRegistry};

use crate::message::{
    Actor, CommitAck, CommitRequest, ConflictNotice, DataReply, DataRequest, Envelope,
    HandoffTransfer, Invalidation, Message, UpdateReport,
};
use crate::model::{
    BaseStationId, DataItemId, Fragment, InstanceId, SiteId, Timestamp, TxnTypeId,
};
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordinatorError {
    #[error("unknown transaction type {0}")]
    UnknownTransactionType(TxnTypeId),
    #[error("transaction type {0} registered twice")]
    DuplicateTransactionType(TxnTypeId),
    #[error("transaction type {0} has no data items")]
    EmptyTransactionType(TxnTypeId),
    #[error("unknown data item {0}")]
    UnknownDataItem(DataItemId),
    #[error("no current transaction row for {0}")]
    UnknownInstance(InstanceId),
    #[error("{instance} writes {item}, which it never requested")]
    WriteOutsideFootprint { instance: InstanceId, item: DataItemId },
    #[error("{at} cannot handle {kind} from {from}")]
    UnexpectedMessage {
        at: BaseStationId,
        from: Actor,
        kind: &'static str,
    },
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for CoordinatorError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownDataItem(id) => CoordinatorError::UnknownDataItem(id),
            other => CoordinatorError::Store(other),
        }
    }
}

/// Conflict-resolution strategy, fixed for a whole run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Push fresh values to every in-flight transaction using the written
    /// items and restart it; stale commits are restarted, never aborted.
    MulticastRestart,
    /// Baseline: a commit that fails validation is aborted.
    AbortOnConflict,
    /// Baseline: periodically broadcast changed item ids to every host in
    /// the cell; stale hosts fetch the data again over the uplink.
    BroadcastInvalidate,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::MulticastRestart,
        Strategy::AbortOnConflict,
        Strategy::BroadcastInvalidate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MulticastRestart => "multicast-restart",
            Strategy::AbortOnConflict => "abort-on-conflict",
            Strategy::BroadcastInvalidate => "broadcast-invalidate",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "multicast-restart" | "multicast" => Ok(Strategy::MulticastRestart),
            "abort-on-conflict" | "abort" => Ok(Strategy::AbortOnConflict),
            "broadcast-invalidate" | "broadcast" => Ok(Strategy::BroadcastInvalidate),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    pub strategy: Strategy,
    /// Maximum restarts per instance; `None` is unlimited.
    pub restart_cap: Option<u32>,
    /// Compare commit read versions with the DBS before applying. Turning
    /// this off is only useful to show that the verifier catches the damage.
    pub backward_validation: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            strategy: Strategy::MulticastRestart,
            restart_cap: None,
            backward_validation: true,
        }
    }
}

/// Fresh values pushed to one in-flight transaction after a commit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Multicast {
    pub site: SiteId,
    pub report: UpdateReport,
    /// The report exceeded the restart cap and the row was withdrawn.
    pub withdrawn: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed {
        commit_seq: u64,
        update_reports: Vec<Multicast>,
    },
    /// The request was stale; re-execute against `report`.
    Restart { report: UpdateReport, withdrawn: bool },
    Aborted,
    /// The request was stale; fetch the data again (broadcast baseline).
    Refetch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Direct,
    Via(BaseStationId),
}

/// Something a coordinator decided, for the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Conflict {
        instance: InstanceId,
        site: SiteId,
        earliest: Timestamp,
    },
    Commit {
        instance: InstanceId,
        site: SiteId,
        commit_seq: u64,
    },
    Multicast {
        instance: InstanceId,
        site: SiteId,
        writer: InstanceId,
        withdrawn: bool,
    },
    Restart {
        instance: InstanceId,
        site: SiteId,
        withdrawn: bool,
    },
    Abort { instance: InstanceId, site: SiteId },
    Refetch { instance: InstanceId, site: SiteId },
    Forward {
        instance: InstanceId,
        to: BaseStationId,
        kind: &'static str,
    },
    Route { instance: InstanceId, route: Route },
    Broadcast { items: usize, hosts: usize },
    /// A commit request for an instance that has no row any more, e.g. one
    /// withdrawn by the restart cap while the request was in flight.
    Orphan { instance: InstanceId, site: SiteId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Output {
    pub sends: Vec<Envelope>,
    pub decisions: Vec<Decision>,
}

#[derive(Clone, Debug)]
pub struct Coordinator {
    id: BaseStationId,
    config: CoordinatorConfig,
    registry: TransactionInfoRegistry,
    table: CurrentTransactionsTable,
    /// Instances started elsewhere whose host is now in this cell, mapped to
    /// their coordinator of record.
    forwarding: BTreeMap<InstanceId, BaseStationId>,
    /// Instances of record here whose host is now served by another station.
    remote: BTreeMap<InstanceId, BaseStationId>,
    broadcast_seq: u64,
}

impl Coordinator {
    pub fn new(
        id: BaseStationId,
        config: CoordinatorConfig,
        registry: TransactionInfoRegistry,
    ) -> Self {
        Coordinator {
            id,
            config,
            registry,
            table: CurrentTransactionsTable::default(),
            forwarding: BTreeMap::new(),
            remote: BTreeMap::new(),
            broadcast_seq: 0,
        }
    }

    pub fn id(&self) -> BaseStationId {
        self.id
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn registry(&self) -> &TransactionInfoRegistry {
        &self.registry
    }

    pub fn table(&self) -> &CurrentTransactionsTable {
        &self.table
    }

    pub fn forwarding_entry(&self, instance: InstanceId) -> Option<BaseStationId> {
        self.forwarding.get(&instance).copied()
    }

    pub fn route_of(&self, instance: InstanceId) -> Route {
        match self.remote.get(&instance) {
            Some(bs) if *bs != self.id => Route::Via(*bs),
            _ => Route::Direct,
        }
    }

    /// Serves a fragment and records the requester in the current table.
    ///
    /// A second request for an instance that already has a row (a re-fetch)
    /// replaces that row.
    pub fn handle_data_request(
        &mut self,
        store: &Store,
        site: SiteId,
        req: &DataRequest,
        now: Timestamp,
    ) -> Result<(DataReply, Option<ConflictNotice>), CoordinatorError> {
        let txn = self
            .registry
            .get(&req.txn_type_id)
            .ok_or_else(|| CoordinatorError::UnknownTransactionType(req.txn_type_id.clone()))?;
        let key = store
            .relation(&txn.relation)
            .map(|r| r.key_attribute().to_string())
            .unwrap_or_default();
        let items = txn.data_items(req.row_key, &key);
        let fragment = store.extract_fragment(&items)?;
        let earliest = self.table.earliest_intersecting(&items, req.instance_id);
        let restarts = self.table.get(req.instance_id).map_or(0, |r| r.restarts);
        self.table.upsert(CurrentTxnRow {
            site,
            instance_id: req.instance_id,
            txn_type_id: req.txn_type_id.clone(),
            data_items: items,
            arrival_time: now,
            shipped_versions: versions(&fragment),
            restarts,
        });
        let reply = DataReply {
            instance_id: req.instance_id,
            fragment,
            arrival_time: now,
        };
        let notice = earliest.map(|earliest_arrival| ConflictNotice {
            instance_id: req.instance_id,
            earliest_arrival,
        });
        Ok((reply, notice))
    }

    /// Backward-validates a commit request and applies or rejects it.
    pub fn handle_commit_request(
        &mut self,
        store: &mut Store,
        req: &CommitRequest,
        now: Timestamp,
    ) -> Result<CommitOutcome, CoordinatorError> {
        let row = self
            .table
            .get(req.instance_id)
            .ok_or(CoordinatorError::UnknownInstance(req.instance_id))?;
        if let Some(item) = req.write_set.keys().find(|i| !row.data_items.contains(*i)) {
            return Err(CoordinatorError::WriteOutsideFootprint {
                instance: req.instance_id,
                item: item.clone(),
            });
        }
        let mut stale = false;
        if self.config.backward_validation {
            for item in &row.data_items {
                let current = store.latest_version(item)?;
                if req.read_versions.get(item) != Some(&current) {
                    stale = true;
                    break;
                }
            }
        }

        if stale {
            return Ok(match self.config.strategy {
                Strategy::MulticastRestart => {
                    let (report, withdrawn) = self.refresh_row(store, req.instance_id, now)?;
                    CommitOutcome::Restart { report, withdrawn }
                }
                Strategy::AbortOnConflict => {
                    self.table.remove(req.instance_id);
                    CommitOutcome::Aborted
                }
                Strategy::BroadcastInvalidate => CommitOutcome::Refetch,
            });
        }

        let commit_seq =
            store.apply_commit(req.instance_id, req.read_versions.clone(), &req.write_set, now)?;
        self.table.remove(req.instance_id);

        let mut update_reports = Vec::new();
        if self.config.strategy == Strategy::MulticastRestart && !req.write_set.is_empty() {
            let written: std::collections::BTreeSet<DataItemId> =
                req.write_set.keys().cloned().collect();
            let targets: Vec<(InstanceId, SiteId)> = self
                .table
                .intersecting(&written, req.instance_id)
                .map(|r| (r.instance_id, r.site))
                .collect();
            for (instance, site) in targets {
                let (report, withdrawn) = self.refresh_row(store, instance, now)?;
                update_reports.push(Multicast {
                    site,
                    report,
                    withdrawn,
                });
            }
        }
        Ok(CommitOutcome::Committed {
            commit_seq,
            update_reports,
        })
    }

    /// Builds an update report with the current DBS values for every item of
    /// the row, stamps the row with `now`, and applies the restart cap.
    fn refresh_row(
        &mut self,
        store: &Store,
        instance: InstanceId,
        now: Timestamp,
    ) -> Result<(UpdateReport, bool), CoordinatorError> {
        let cap = self.config.restart_cap;
        let row = self
            .table
            .get_mut(instance)
            .ok_or(CoordinatorError::UnknownInstance(instance))?;
        let fresh = store.extract_fragment(&row.data_items)?;
        let newer = fresh
            .iter()
            .any(|(id, vv)| row.shipped_versions.get(id).is_none_or(|v| vv.version > *v));
        if newer {
            row.restarts += 1;
        }
        row.shipped_versions = versions(&fresh);
        row.arrival_time = now;
        let withdrawn = cap.is_some_and(|c| row.restarts > c);
        if withdrawn {
            self.table.remove(instance);
        }
        Ok((
            UpdateReport {
                instance_id: instance,
                fresh_values: fresh,
                new_arrival_time: now,
            },
            withdrawn,
        ))
    }

    /// Orders simultaneous commit requests: earliest row arrival first, then
    /// lowest site. Requests without a row sort last.
    pub fn tie_break(&self, mut pending: Vec<(SiteId, CommitRequest)>) -> Vec<(SiteId, CommitRequest)> {
        pending.sort_by_key(|(site, req)| {
            let arrival = self
                .table
                .get(req.instance_id)
                .map_or(Timestamp(u64::MAX), |r| r.arrival_time);
            (arrival, *site)
        });
        pending
    }

    /// Records at the coordinator of record which station now serves the
    /// instance's host. Returns the new route and the previously serving
    /// station, if any.
    pub fn handoff_register(
        &mut self,
        instance: InstanceId,
        serving: BaseStationId,
    ) -> Result<(Route, Option<BaseStationId>), CoordinatorError> {
        if !self.table.contains(instance) {
            return Err(CoordinatorError::UnknownInstance(instance));
        }
        Ok(self.set_serving(instance, serving))
    }

    fn set_serving(
        &mut self,
        instance: InstanceId,
        serving: BaseStationId,
    ) -> (Route, Option<BaseStationId>) {
        if serving == self.id {
            (Route::Direct, self.remote.remove(&instance))
        } else {
            (Route::Via(serving), self.remote.insert(instance, serving))
        }
    }

    /// Invalidation reports for the broadcast baseline: every item changed
    /// in the DBS since the previous tick, sent to every host in the cell.
    pub fn broadcast_tick(
        &mut self,
        store: &Store,
        registered: &[SiteId],
        _now: Timestamp,
    ) -> Vec<Envelope> {
        if self.config.strategy != Strategy::BroadcastInvalidate {
            return Vec::new();
        }
        let items = store.changes_since(self.broadcast_seq);
        self.broadcast_seq = store.log().last_seq();
        if items.is_empty() {
            return Vec::new();
        }
        registered
            .iter()
            .map(|site| {
                Envelope::new(
                    Actor::BaseStation(self.id),
                    Actor::Host(*site),
                    Message::Invalidation(Invalidation {
                        items: items.clone(),
                    }),
                )
            })
            .collect()
    }

    /// Processes every message delivered to this station at one instant.
    ///
    /// Messages are handled in delivery order, except that commit requests
    /// to be decided here are collected and decided last, in
    /// [`tie_break`](Self::tie_break) order.
    pub fn on_deliveries(
        &mut self,
        store: &mut Store,
        deliveries: Vec<Envelope>,
        now: Timestamp,
    ) -> Result<Output, CoordinatorError> {
        let mut out = Output::default();
        let mut commits = Vec::new();
        for env in deliveries {
            match env.from {
                Actor::Host(site) => self.from_host(store, site, env.message, now, &mut out, &mut commits)?,
                Actor::BaseStation(peer) => match env.message {
                    Message::HandoffForward(inner) => {
                        self.from_peer(store, peer, *inner, now, &mut out, &mut commits)?
                    }
                    other => {
                        return Err(CoordinatorError::UnexpectedMessage {
                            at: self.id,
                            from: env.from,
                            kind: other.kind(),
                        })
                    }
                },
            }
        }
        for (site, req) in self.tie_break(commits) {
            self.decide_commit(store, site, req, now, &mut out)?;
        }
        Ok(out)
    }

    fn from_host(
        &mut self,
        store: &Store,
        site: SiteId,
        msg: Message,
        now: Timestamp,
        out: &mut Output,
        commits: &mut Vec<(SiteId, CommitRequest)>,
    ) -> Result<(), CoordinatorError> {
        let instance = msg.instance_id();
        if let Some(cor) = instance.and_then(|i| self.forwarding.get(&i).copied()) {
            if !matches!(msg, Message::HandoffTransfer(_)) {
                out.decisions.push(Decision::Forward {
                    instance: instance.expect("checked"),
                    to: cor,
                    kind: msg.kind(),
                });
                out.sends.push(self.wrap_to_peer(cor, Actor::Host(site), Actor::BaseStation(cor), msg));
                return Ok(());
            }
        }
        match msg {
            Message::DataRequest(req) => self.serve_data_request(store, site, &req, now, out),
            Message::CommitRequest(req) => {
                commits.push((site, req));
                Ok(())
            }
            Message::HandoffTransfer(t) => {
                self.accept_host_transfer(site, t, out);
                Ok(())
            }
            other => Err(CoordinatorError::UnexpectedMessage {
                at: self.id,
                from: Actor::Host(site),
                kind: other.kind(),
            }),
        }
    }

    fn from_peer(
        &mut self,
        store: &Store,
        peer: BaseStationId,
        inner: Envelope,
        now: Timestamp,
        out: &mut Output,
        commits: &mut Vec<(SiteId, CommitRequest)>,
    ) -> Result<(), CoordinatorError> {
        match (inner.from, inner.to, inner.message) {
            // Relay towards a host in this cell.
            (_, Actor::Host(site), msg) => {
                if matches!(msg, Message::CommitAck(_) | Message::AbortNotice { .. }) {
                    if let Some(i) = msg.instance_id() {
                        self.forwarding.remove(&i);
                    }
                }
                out.sends.push(Envelope::new(Actor::BaseStation(self.id), Actor::Host(site), msg));
                Ok(())
            }
            (_, Actor::BaseStation(to), Message::HandoffTransfer(t)) if to == self.id => {
                if t.coordinator_of_record == self.id {
                    if self.table.contains(t.instance_id) {
                        let (route, previous) = self.set_serving(t.instance_id, peer);
                        out.decisions.push(Decision::Route {
                            instance: t.instance_id,
                            route,
                        });
                        self.retire_forwarding(previous, peer, t.instance_id, out);
                    }
                } else {
                    self.forwarding.remove(&t.instance_id);
                }
                Ok(())
            }
            (Actor::Host(site), Actor::BaseStation(to), Message::DataRequest(req)) if to == self.id => {
                self.serve_data_request(store, site, &req, now, out)
            }
            (Actor::Host(site), Actor::BaseStation(to), Message::CommitRequest(req)) if to == self.id => {
                commits.push((site, req));
                Ok(())
            }
            (_, _, msg) => Err(CoordinatorError::UnexpectedMessage {
                at: self.id,
                from: Actor::BaseStation(peer),
                kind: msg.kind(),
            }),
        }
    }

    fn accept_host_transfer(&mut self, site: SiteId, t: HandoffTransfer, out: &mut Output) {
        let _ = site;
        if t.coordinator_of_record == self.id {
            // The host came back to the cell where its transaction began.
            let (route, previous) = self.set_serving(t.instance_id, self.id);
            out.decisions.push(Decision::Route {
                instance: t.instance_id,
                route,
            });
            self.retire_forwarding(previous, self.id, t.instance_id, out);
        } else {
            let cor = t.coordinator_of_record;
            self.forwarding.insert(t.instance_id, cor);
            out.decisions.push(Decision::Forward {
                instance: t.instance_id,
                to: cor,
                kind: "HandoffTransfer",
            });
            let me = Actor::BaseStation(self.id);
            out.sends.push(self.wrap_to_peer(cor, me, Actor::BaseStation(cor), Message::HandoffTransfer(t)));
        }
    }

    /// Tells a station that no longer serves the host to drop its forwarding entry.
    fn retire_forwarding(
        &self,
        previous: Option<BaseStationId>,
        current: BaseStationId,
        instance: InstanceId,
        out: &mut Output,
    ) {
        if let Some(prev) = previous.filter(|p| *p != current && *p != self.id) {
            let t = HandoffTransfer {
                instance_id: instance,
                coordinator_of_record: self.id,
            };
            out.sends.push(self.wrap_to_peer(
                prev,
                Actor::BaseStation(self.id),
                Actor::BaseStation(prev),
                Message::HandoffTransfer(t),
            ));
        }
    }

    fn wrap_to_peer(&self, peer: BaseStationId, from: Actor, to: Actor, msg: Message) -> Envelope {
        Envelope::new(
            Actor::BaseStation(self.id),
            Actor::BaseStation(peer),
            Message::HandoffForward(Box::new(Envelope::new(from, to, msg))),
        )
    }

    fn to_host(&self, instance: InstanceId, site: SiteId, msg: Message) -> Envelope {
        match self.route_of(instance) {
            Route::Direct => Envelope::new(Actor::BaseStation(self.id), Actor::Host(site), msg),
            Route::Via(bs) => {
                self.wrap_to_peer(bs, Actor::BaseStation(self.id), Actor::Host(site), msg)
            }
        }
    }

    fn serve_data_request(
        &mut self,
        store: &Store,
        site: SiteId,
        req: &DataRequest,
        now: Timestamp,
        out: &mut Output,
    ) -> Result<(), CoordinatorError> {
        let (reply, notice) = self.handle_data_request(store, site, req, now)?;
        out.sends.push(self.to_host(req.instance_id, site, Message::DataReply(reply)));
        if let Some(n) = notice {
            out.decisions.push(Decision::Conflict {
                instance: req.instance_id,
                site,
                earliest: n.earliest_arrival,
            });
            out.sends.push(self.to_host(req.instance_id, site, Message::ConflictNotice(n)));
        }
        Ok(())
    }

    fn decide_commit(
        &mut self,
        store: &mut Store,
        site: SiteId,
        req: CommitRequest,
        now: Timestamp,
        out: &mut Output,
    ) -> Result<(), CoordinatorError> {
        let instance = req.instance_id;
        if !self.table.contains(instance) {
            out.decisions.push(Decision::Orphan { instance, site });
            return Ok(());
        }
        match self.handle_commit_request(store, &req, now)? {
            CommitOutcome::Committed {
                commit_seq,
                update_reports,
            } => {
                for m in update_reports {
                    let target = m.report.instance_id;
                    out.decisions.push(Decision::Multicast {
                        instance: target,
                        site: m.site,
                        writer: instance,
                        withdrawn: m.withdrawn,
                    });
                    out.sends.push(self.to_host(target, m.site, Message::UpdateReport(m.report)));
                    if m.withdrawn {
                        self.remote.remove(&target);
                    }
                }
                out.decisions.push(Decision::Commit {
                    instance,
                    site,
                    commit_seq,
                });
                out.sends.push(self.to_host(
                    instance,
                    site,
                    Message::CommitAck(CommitAck {
                        instance_id: instance,
                        commit_seq,
                    }),
                ));
                self.remote.remove(&instance);
            }
            CommitOutcome::Restart { report, withdrawn } => {
                out.decisions.push(Decision::Restart {
                    instance,
                    site,
                    withdrawn,
                });
                out.sends.push(self.to_host(instance, site, Message::UpdateReport(report)));
                if withdrawn {
                    self.remote.remove(&instance);
                }
            }
            CommitOutcome::Aborted => {
                out.decisions.push(Decision::Abort { instance, site });
                out.sends.push(self.to_host(instance, site, Message::AbortNotice { instance_id: instance }));
                self.remote.remove(&instance);
            }
            CommitOutcome::Refetch => {
                out.decisions.push(Decision::Refetch { instance, site });
                out.sends.push(self.to_host(instance, site, Message::RefetchNotice { instance_id: instance }));
            }
        }
        Ok(())
    }
}

fn versions(fragment: &Fragment) -> BTreeMap<DataItemId, u64> {
    fragment.iter().map(|(id, vv)| (id.clone(), vv.version)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VersionedValue;
    use crate::store::Relation;

    fn item(key: i64) -> DataItemId {
        DataItemId::new("Account", key, "Amount")
    }

    fn bank() -> Store {
        let rel = Relation::from_rows(
            "Account",
            &["Account_no", "Amount"],
            [(101, vec![10000]), (102, vec![12300]), (103, vec![11500])],
        )
        .unwrap();
        Store::load_initial([rel]).unwrap()
    }

    fn coordinator(strategy: Strategy) -> Coordinator {
        Coordinator::new(
            BaseStationId(1),
            CoordinatorConfig {
                strategy,
                ..Default::default()
            },
            TransactionInfoRegistry::banking(),
        )
    }

    fn request(instance: u64, txn: &str, key: i64) -> DataRequest {
        DataRequest {
            instance_id: InstanceId(instance),
            txn_type_id: TxnTypeId::new(txn),
            row_key: key,
        }
    }

    fn commit(instance: u64, key: i64, read: u64, value: i64) -> CommitRequest {
        CommitRequest {
            instance_id: InstanceId(instance),
            read_versions: [(item(key), read)].into(),
            write_set: [(item(key), value)].into(),
        }
    }

    /// M1 requests T1 on 103 at 605000, M2 requests T2 on 103 at 610000.
    fn two_requests(strategy: Strategy) -> (Coordinator, Store) {
        let store = bank();
        let mut c = coordinator(strategy);
        let (reply, notice) = c
            .handle_data_request(&store, SiteId(1), &request(1, "T1", 103), Timestamp(605_000))
            .unwrap();
        assert_eq!(reply.fragment[&item(103)], VersionedValue::new(11500, 0));
        assert_eq!(reply.arrival_time, Timestamp(605_000));
        assert!(notice.is_none());
        let (_, notice) = c
            .handle_data_request(&store, SiteId(2), &request(2, "T2", 103), Timestamp(610_000))
            .unwrap();
        assert_eq!(notice.unwrap().earliest_arrival, Timestamp(605_000));
        (c, store)
    }

    #[test]
    fn data_requests_fill_the_table() {
        let (mut c, store) = two_requests(Strategy::MulticastRestart);
        let rows: Vec<_> = c
            .table()
            .iter()
            .map(|r| (r.site, r.txn_type_id.as_str().to_string(), r.arrival_time))
            .collect();
        assert_eq!(
            rows,
            [
                (SiteId(1), "T1".to_string(), Timestamp(605_000)),
                (SiteId(2), "T2".to_string(), Timestamp(610_000))
            ]
        );
        let (_, notice) = c
            .handle_data_request(&store, SiteId(3), &request(3, "T3", 101), Timestamp(611_000))
            .unwrap();
        assert!(notice.is_none());
        assert_eq!(c.table().len(), 3);
    }

    #[test]
    fn unknown_type_and_row() {
        let store = bank();
        let mut c = coordinator(Strategy::MulticastRestart);
        assert_eq!(
            c.handle_data_request(&store, SiteId(1), &request(1, "T9", 103), Timestamp(0)),
            Err(CoordinatorError::UnknownTransactionType(TxnTypeId::new("T9")))
        );
        assert_eq!(
            c.handle_data_request(&store, SiteId(1), &request(1, "T1", 999), Timestamp(0)),
            Err(CoordinatorError::UnknownDataItem(item(999)))
        );
        assert!(c.table().is_empty());
    }

    #[test]
    fn first_commit_multicasts_to_the_other_row() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        let out = c
            .handle_commit_request(&mut store, &commit(1, 103, 0, 12500), Timestamp(700_000))
            .unwrap();
        let CommitOutcome::Committed { commit_seq, update_reports } = out else {
            panic!("expected commit, got {out:?}");
        };
        assert_eq!(commit_seq, 1);
        assert_eq!(update_reports.len(), 1);
        assert_eq!(update_reports[0].site, SiteId(2));
        assert_eq!(
            update_reports[0].report.fresh_values[&item(103)],
            VersionedValue::new(12500, 1)
        );
        assert!(!c.table().contains(InstanceId(1)));
        assert_eq!(c.table().get(InstanceId(2)).unwrap().arrival_time, Timestamp(700_000));
    }

    #[test]
    fn second_writer_first_is_also_fine() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        let out = c
            .handle_commit_request(&mut store, &commit(2, 103, 0, 11000), Timestamp(620_000))
            .unwrap();
        let CommitOutcome::Committed { update_reports, .. } = out else { panic!() };
        assert_eq!(update_reports[0].site, SiteId(1));
        assert_eq!(store.read(&item(103)).unwrap(), VersionedValue::new(11000, 1));
        assert!(!c.table().contains(InstanceId(2)));
    }

    #[test]
    fn stale_commit_restarts_under_multicast() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        c.handle_commit_request(&mut store, &commit(1, 103, 0, 12500), Timestamp(700_000))
            .unwrap();
        let out = c
            .handle_commit_request(&mut store, &commit(2, 103, 0, 11000), Timestamp(701_000))
            .unwrap();
        let CommitOutcome::Restart { report, withdrawn } = out else { panic!("{out:?}") };
        assert!(!withdrawn);
        assert_eq!(report.fresh_values[&item(103)], VersionedValue::new(12500, 1));
        assert_eq!(report.new_arrival_time, Timestamp(701_000));
        assert_eq!(c.table().get(InstanceId(2)).unwrap().arrival_time, Timestamp(701_000));
        assert_eq!(store.log().len(), 1);
    }

    #[test]
    fn stale_commit_aborts_under_baseline() {
        let (mut c, mut store) = two_requests(Strategy::AbortOnConflict);
        let CommitOutcome::Committed { update_reports, .. } = c
            .handle_commit_request(&mut store, &commit(1, 103, 0, 12500), Timestamp(700_000))
            .unwrap()
        else {
            panic!()
        };
        assert!(update_reports.is_empty());
        let out = c
            .handle_commit_request(&mut store, &commit(2, 103, 0, 11000), Timestamp(701_000))
            .unwrap();
        assert_eq!(out, CommitOutcome::Aborted);
        assert!(c.table().is_empty());
    }

    #[test]
    fn stale_commit_refetches_under_broadcast() {
        let (mut c, mut store) = two_requests(Strategy::BroadcastInvalidate);
        c.handle_commit_request(&mut store, &commit(1, 103, 0, 12500), Timestamp(700_000))
            .unwrap();
        let out = c
            .handle_commit_request(&mut store, &commit(2, 103, 0, 11000), Timestamp(701_000))
            .unwrap();
        assert_eq!(out, CommitOutcome::Refetch);
        assert!(c.table().contains(InstanceId(2)));
    }

    #[test]
    fn read_only_commit_sends_no_reports() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        c.handle_data_request(&store, SiteId(3), &request(3, "T3", 103), Timestamp(612_000))
            .unwrap();
        let req = CommitRequest {
            instance_id: InstanceId(3),
            read_versions: [(item(103), 0)].into(),
            write_set: BTreeMap::new(),
        };
        let out = c.handle_commit_request(&mut store, &req, Timestamp(613_000)).unwrap();
        assert_eq!(
            out,
            CommitOutcome::Committed {
                commit_seq: 1,
                update_reports: vec![]
            }
        );
    }

    #[test]
    fn unknown_instance_and_foreign_writes() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        assert_eq!(
            c.handle_commit_request(&mut store, &commit(9, 103, 0, 1), Timestamp(1)),
            Err(CoordinatorError::UnknownInstance(InstanceId(9)))
        );
        assert!(matches!(
            c.handle_commit_request(&mut store, &commit(1, 101, 0, 1), Timestamp(1)),
            Err(CoordinatorError::WriteOutsideFootprint { .. })
        ));
    }

    #[test]
    fn missing_read_version_counts_as_stale() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        let req = CommitRequest {
            instance_id: InstanceId(1),
            read_versions: BTreeMap::new(),
            write_set: [(item(103), 1)].into(),
        };
        assert!(matches!(
            c.handle_commit_request(&mut store, &req, Timestamp(1)).unwrap(),
            CommitOutcome::Restart { .. }
        ));
    }

    #[test]
    fn tie_break_orders_by_arrival_then_site() {
        let (c, _) = two_requests(Strategy::MulticastRestart);
        let order = c.tie_break(vec![
            (SiteId(2), commit(2, 103, 0, 11000)),
            (SiteId(1), commit(1, 103, 0, 12500)),
        ]);
        assert_eq!(order[0].0, SiteId(1));
        assert_eq!(order.len(), 2);

        let single = c.tie_break(vec![(SiteId(2), commit(2, 103, 0, 1))]);
        assert_eq!(single.len(), 1);

        let store = bank();
        let mut c = coordinator(Strategy::MulticastRestart);
        for (i, site) in [(1, 2), (2, 1)] {
            c.handle_data_request(&store, SiteId(site), &request(i, "T1", 103), Timestamp(5))
                .unwrap();
        }
        let order = c.tie_break(vec![
            (SiteId(2), commit(1, 103, 0, 1)),
            (SiteId(1), commit(2, 103, 0, 2)),
        ]);
        assert_eq!(order[0].0, SiteId(1));
    }

    #[test]
    fn simultaneous_commits_favor_earlier_arrival() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        let deliveries = vec![
            Envelope::new(
                Actor::Host(SiteId(2)),
                Actor::BaseStation(BaseStationId(1)),
                Message::CommitRequest(commit(2, 103, 0, 11000)),
            ),
            Envelope::new(
                Actor::Host(SiteId(1)),
                Actor::BaseStation(BaseStationId(1)),
                Message::CommitRequest(commit(1, 103, 0, 12500)),
            ),
        ];
        let out = c.on_deliveries(&mut store, deliveries, Timestamp(700_000)).unwrap();
        assert_eq!(store.read(&item(103)).unwrap(), VersionedValue::new(12500, 1));
        assert!(out.decisions.contains(&Decision::Commit {
            instance: InstanceId(1),
            site: SiteId(1),
            commit_seq: 1
        }));
        assert!(out.decisions.contains(&Decision::Restart {
            instance: InstanceId(2),
            site: SiteId(2),
            withdrawn: false
        }));
    }

    #[test]
    fn restart_cap_withdraws_row() {
        let store = bank();
        let mut c = Coordinator::new(
            BaseStationId(1),
            CoordinatorConfig {
                restart_cap: Some(1),
                ..Default::default()
            },
            TransactionInfoRegistry::banking(),
        );
        let mut store = store;
        for (i, site) in [(1, 1), (2, 2), (3, 3)] {
            c.handle_data_request(&store, SiteId(site), &request(i, "T1", 103), Timestamp(i))
                .unwrap();
        }
        // Each of the first two commits restarts instance 3 once.
        let CommitOutcome::Committed { update_reports, .. } = c
            .handle_commit_request(&mut store, &commit(1, 103, 0, 1), Timestamp(10))
            .unwrap()
        else {
            panic!()
        };
        assert!(update_reports.iter().all(|m| !m.withdrawn));
        let CommitOutcome::Committed { update_reports, .. } = c
            .handle_commit_request(&mut store, &commit(2, 103, 1, 2), Timestamp(11))
            .unwrap()
        else {
            panic!()
        };
        assert!(update_reports[0].withdrawn);
        assert!(c.table().is_empty());
    }

    #[test]
    fn broadcast_tick_lists_changes_once() {
        let (mut c, mut store) = two_requests(Strategy::BroadcastInvalidate);
        let hosts = [SiteId(1), SiteId(2), SiteId(3), SiteId(4), SiteId(5)];
        assert!(c.broadcast_tick(&store, &hosts, Timestamp(1)).is_empty());
        store
            .apply_commit(InstanceId(8), BTreeMap::new(), &[(item(101), 1)].into(), Timestamp(2))
            .unwrap();
        store
            .apply_commit(InstanceId(9), BTreeMap::new(), &[(item(102), 1)].into(), Timestamp(3))
            .unwrap();
        let msgs = c.broadcast_tick(&store, &hosts, Timestamp(4));
        assert_eq!(msgs.len(), 5);
        for m in &msgs {
            let Message::Invalidation(inv) = &m.message else { panic!() };
            assert_eq!(inv.items.len(), 2);
        }
        assert!(c.broadcast_tick(&store, &hosts, Timestamp(5)).is_empty());
    }

    #[test]
    fn broadcast_tick_is_inert_for_other_strategies() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        store
            .apply_commit(InstanceId(8), BTreeMap::new(), &[(item(101), 1)].into(), Timestamp(2))
            .unwrap();
        assert!(c.broadcast_tick(&store, &[SiteId(1)], Timestamp(4)).is_empty());
    }

    #[test]
    fn handoff_routes_through_serving_station() {
        let (mut c, mut store) = two_requests(Strategy::MulticastRestart);
        let (route, prev) = c.handoff_register(InstanceId(1), BaseStationId(2)).unwrap();
        assert_eq!(route, Route::Via(BaseStationId(2)));
        assert_eq!(prev, None);
        assert_eq!(
            c.handoff_register(InstanceId(42), BaseStationId(2)),
            Err(CoordinatorError::UnknownInstance(InstanceId(42)))
        );

        // A forwarded commit is decided here and acknowledged via BS2.
        let fwd = Envelope::new(
            Actor::BaseStation(BaseStationId(2)),
            Actor::BaseStation(BaseStationId(1)),
            Message::HandoffForward(Box::new(Envelope::new(
                Actor::Host(SiteId(1)),
                Actor::BaseStation(BaseStationId(1)),
                Message::CommitRequest(commit(1, 103, 0, 12500)),
            ))),
        );
        let out = c.on_deliveries(&mut store, vec![fwd], Timestamp(700_000)).unwrap();
        let ack = out
            .sends
            .iter()
            .find(|e| matches!(&e.message, Message::HandoffForward(inner) if inner.message.kind() == "CommitAck"))
            .expect("ack relayed through BS2");
        assert_eq!(ack.to, Actor::BaseStation(BaseStationId(2)));
        // M2 is still local and hears about it directly.
        assert!(out
            .sends
            .iter()
            .any(|e| e.to == Actor::Host(SiteId(2)) && e.message.kind() == "UpdateReport"));
    }

    #[test]
    fn returning_host_restores_direct_route() {
        let (mut c, _) = two_requests(Strategy::MulticastRestart);
        c.handoff_register(InstanceId(1), BaseStationId(2)).unwrap();
        let (route, prev) = c.handoff_register(InstanceId(1), BaseStationId(1)).unwrap();
        assert_eq!(route, Route::Direct);
        assert_eq!(prev, Some(BaseStationId(2)));
        assert_eq!(c.route_of(InstanceId(1)), Route::Direct);
    }

    #[test]
    fn serving_station_forwards_and_relays() {
        let mut store = bank();
        let mut bs2 = Coordinator::new(
            BaseStationId(2),
            CoordinatorConfig::default(),
            TransactionInfoRegistry::banking(),
        );
        let transfer = Envelope::new(
            Actor::Host(SiteId(1)),
            Actor::BaseStation(BaseStationId(2)),
            Message::HandoffTransfer(HandoffTransfer {
                instance_id: InstanceId(1),
                coordinator_of_record: BaseStationId(1),
            }),
        );
        let out = bs2.on_deliveries(&mut store, vec![transfer], Timestamp(1)).unwrap();
        assert_eq!(bs2.forwarding_entry(InstanceId(1)), Some(BaseStationId(1)));
        assert_eq!(out.sends.len(), 1);
        assert_eq!(out.sends[0].to, Actor::BaseStation(BaseStationId(1)));

        let req = Envelope::new(
            Actor::Host(SiteId(1)),
            Actor::BaseStation(BaseStationId(2)),
            Message::CommitRequest(commit(1, 103, 0, 12500)),
        );
        let out = bs2.on_deliveries(&mut store, vec![req], Timestamp(2)).unwrap();
        assert_eq!(out.sends[0].to, Actor::BaseStation(BaseStationId(1)));
        assert!(store.log().is_empty());

        let ack = Envelope::new(
            Actor::BaseStation(BaseStationId(1)),
            Actor::BaseStation(BaseStationId(2)),
            Message::HandoffForward(Box::new(Envelope::new(
                Actor::BaseStation(BaseStationId(1)),
                Actor::Host(SiteId(1)),
                Message::CommitAck(CommitAck {
                    instance_id: InstanceId(1),
                    commit_seq: 1,
                }),
            ))),
        );
        let out = bs2.on_deliveries(&mut store, vec![ack], Timestamp(3)).unwrap();
        assert_eq!(out.sends[0].to, Actor::Host(SiteId(1)));
        assert_eq!(bs2.forwarding_entry(InstanceId(1)), None);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("abort".parse::<Strategy>().unwrap(), Strategy::AbortOnConflict);
        assert!("locking".parse::<Strategy>().is_err());
    }
}
