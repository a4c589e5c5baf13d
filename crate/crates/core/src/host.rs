//! A mobile host: begins transactions, runs them against a local snapshot,
//! and re-executes them when fresh values arrive.
//!
//! Hosts are driven by the simulation loop. Every handler returns a
//! [`HostOutput`] describing messages to put on the uplink now, local
//! computations to schedule, and what happened, rather than touching the
//! network itself.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::Strategy;
use crate::logic::{LogicResult, TransactionLogic, WriteSet};
use crate::message::{
    Actor, CommitAck, CommitRequest, DataReply, DataRequest, Envelope, HandoffTransfer,
    Invalidation, Message, UpdateReport,
};
use crate::model::{
    CellId, Fragment, IllegalTransition, InstanceId, Params, SiteId, Timestamp,
    TransactionInstance, TxnState, TxnTypeId,
};

pub const DEFAULT_COMPUTE_DELAY_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("{0} is disconnected")]
    DisconnectedHost(SiteId),
    #[error("{site} has no active instance {instance}")]
    UnknownInstance { site: SiteId, instance: InstanceId },
    #[error("{site} already runs {instance}")]
    DuplicateInstance { site: SiteId, instance: InstanceId },
    #[error("no transaction logic for {0}")]
    UnknownTransactionType(TxnTypeId),
    #[error("{site} cannot handle {kind}")]
    UnexpectedMessage { site: SiteId, kind: &'static str },
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostConfig {
    pub compute_delay_ms: u64,
    pub restart_cap: Option<u32>,
    pub strategy: Strategy,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            compute_delay_ms: DEFAULT_COMPUTE_DELAY_MS,
            restart_cap: None,
            strategy: Strategy::MulticastRestart,
        }
    }
}

/// How an instance left the host.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Committed,
    LocallyFailed,
    Aborted,
    Starved,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finished {
    pub instance: TransactionInstance,
    pub outcome: Outcome,
    pub at: Timestamp,
}

/// Something the host did, for tracing and metrics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HostEvent {
    Began { instance: InstanceId },
    Executed { instance: InstanceId, restart: u32 },
    LocallyCommitted { instance: InstanceId },
    LocallyFailed { instance: InstanceId, reason: String },
    Restarted { instance: InstanceId, restart_count: u32, refetch: bool },
    Starved { instance: InstanceId },
    Committed { instance: InstanceId, commit_seq: u64, latency_ms: u64 },
    Aborted { instance: InstanceId },
    StaleReport { instance: InstanceId },
    ConflictNotice { instance: InstanceId, earliest: Timestamp },
    /// A commit decision arrived in a state that cannot legally receive it.
    /// Only happens when the coordinator skips validation.
    Anomaly { instance: InstanceId, detail: String },
}

/// A local computation to run after `delay_ms`. `epoch` is the instance's
/// restart count when it was scheduled; a restart invalidates it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComputeJob {
    pub instance: InstanceId,
    pub epoch: u32,
    pub delay_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HostOutput {
    pub sends: Vec<Envelope>,
    pub compute: Vec<ComputeJob>,
    pub events: Vec<HostEvent>,
}

impl HostOutput {
    fn merge(&mut self, other: HostOutput) {
        self.sends.extend(other.sends);
        self.compute.extend(other.compute);
        self.events.extend(other.events);
    }
}

#[derive(Clone, Debug)]
pub struct MobileHost {
    site: SiteId,
    cell: CellId,
    connected: bool,
    config: HostConfig,
    logic: TransactionLogic,
    active: BTreeMap<InstanceId, TransactionInstance>,
    write_sets: BTreeMap<InstanceId, WriteSet>,
    finished: BTreeMap<InstanceId, Finished>,
    pending_outbox: VecDeque<Message>,
}

impl MobileHost {
    pub fn new(site: SiteId, cell: CellId, config: HostConfig, logic: TransactionLogic) -> Self {
        MobileHost {
            site,
            cell,
            connected: true,
            config,
            logic,
            active: BTreeMap::new(),
            write_sets: BTreeMap::new(),
            finished: BTreeMap::new(),
            pending_outbox: VecDeque::new(),
        }
    }

    pub fn site(&self) -> SiteId {
        self.site
    }

    pub fn cell(&self) -> CellId {
        self.cell
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    pub fn active(&self) -> &BTreeMap<InstanceId, TransactionInstance> {
        &self.active
    }

    pub fn instance(&self, id: InstanceId) -> Option<&TransactionInstance> {
        self.active
            .get(&id)
            .or_else(|| self.finished.get(&id).map(|f| &f.instance))
    }

    pub fn finished(&self) -> &BTreeMap<InstanceId, Finished> {
        &self.finished
    }

    pub fn outbox_len(&self) -> usize {
        self.pending_outbox.len()
    }

    fn send(&mut self, msg: Message, out: &mut HostOutput) {
        if self.connected {
            out.sends.push(Envelope::new(
                Actor::Host(self.site),
                Actor::BaseStation(self.cell.base_station()),
                msg,
            ));
        } else {
            self.pending_outbox.push_back(msg);
        }
    }

    fn active_mut(&mut self, id: InstanceId) -> Result<&mut TransactionInstance, HostError> {
        let site = self.site;
        self.active
            .get_mut(&id)
            .ok_or(HostError::UnknownInstance { site, instance: id })
    }

    fn finish(&mut self, id: InstanceId, outcome: Outcome, now: Timestamp) {
        if let Some(instance) = self.active.remove(&id) {
            self.write_sets.remove(&id);
            self.finished.insert(id, Finished { instance, outcome, at: now });
        }
    }

    /// Creates an instance and asks the local base station for its data.
    pub fn begin_transaction(
        &mut self,
        instance_id: InstanceId,
        txn_type_id: TxnTypeId,
        params: Params,
        now: Timestamp,
    ) -> Result<HostOutput, HostError> {
        if !self.connected {
            return Err(HostError::DisconnectedHost(self.site));
        }
        if self.logic.operation(&txn_type_id).is_none() {
            return Err(HostError::UnknownTransactionType(txn_type_id));
        }
        if self.active.contains_key(&instance_id) || self.finished.contains_key(&instance_id) {
            return Err(HostError::DuplicateInstance {
                site: self.site,
                instance: instance_id,
            });
        }
        let mut inst = TransactionInstance::new(
            instance_id,
            self.site,
            txn_type_id.clone(),
            params,
            self.cell.base_station(),
            now,
        );
        inst.transition(TxnState::Requested)?;
        self.active.insert(instance_id, inst);
        let mut out = HostOutput::default();
        out.events.push(HostEvent::Began { instance: instance_id });
        self.send(
            Message::DataRequest(DataRequest {
                instance_id,
                txn_type_id,
                row_key: params.row_key,
            }),
            &mut out,
        );
        Ok(out)
    }

    /// Installs the fragment and schedules local execution.
    pub fn on_data_reply(&mut self, reply: DataReply, _now: Timestamp) -> Result<HostOutput, HostError> {
        let delay = self.config.compute_delay_ms;
        let inst = self.active_mut(reply.instance_id)?;
        inst.transition(TxnState::Tentative)?;
        inst.snapshot = reply.fragment;
        inst.arrival_time = reply.arrival_time;
        let job = ComputeJob {
            instance: inst.instance_id,
            epoch: inst.restart_count,
            delay_ms: delay,
        };
        Ok(HostOutput {
            compute: vec![job],
            ..Default::default()
        })
    }

    /// Local execution finished. Superseded jobs are ignored.
    pub fn on_compute_done(
        &mut self,
        instance: InstanceId,
        epoch: u32,
        now: Timestamp,
    ) -> Result<HostOutput, HostError> {
        let mut out = HostOutput::default();
        let Some(inst) = self.active.get_mut(&instance) else {
            return Ok(out);
        };
        if inst.restart_count != epoch || inst.state != TxnState::Tentative {
            return Ok(out);
        }
        let result = self
            .logic
            .execute(&inst.txn_type_id, &inst.snapshot, &inst.params)
            .ok_or_else(|| HostError::UnknownTransactionType(inst.txn_type_id.clone()))?;
        out.events.push(HostEvent::Executed {
            instance,
            restart: epoch,
        });
        match result {
            LogicResult::LocalFailure(reason) => {
                inst.transition(TxnState::LocallyFailed)?;
                out.events.push(HostEvent::LocallyFailed { instance, reason });
                self.finish(instance, Outcome::LocallyFailed, now);
            }
            LogicResult::WriteSet(ws) => {
                inst.transition(TxnState::LocallyCommitted)?;
                self.write_sets.insert(instance, ws);
                out.events.push(HostEvent::LocallyCommitted { instance });
                out.merge(self.submit_commit(instance)?);
            }
        }
        Ok(out)
    }

    /// Sends the local result to the coordinator, or queues it while offline.
    pub fn submit_commit(&mut self, instance: InstanceId) -> Result<HostOutput, HostError> {
        let inst = self.active_mut(instance)?;
        inst.transition(TxnState::AwaitingGlobal)?;
        let read_versions = inst.read_versions();
        let write_set = self.write_sets.get(&instance).cloned().unwrap_or_default();
        let mut out = HostOutput::default();
        self.send(
            Message::CommitRequest(CommitRequest {
                instance_id: instance,
                read_versions,
                write_set,
            }),
            &mut out,
        );
        Ok(out)
    }

    /// Re-executes against pushed values. The restart itself sends nothing.
    ///
    /// Reports for finished instances, and reports carrying nothing newer
    /// than the current snapshot, are counted as stale and ignored.
    pub fn on_update_report(&mut self, report: UpdateReport, _now: Timestamp) -> Result<HostOutput, HostError> {
        let mut out = HostOutput::default();
        let id = report.instance_id;
        let Some(inst) = self.active.get_mut(&id) else {
            if self.finished.contains_key(&id) {
                out.events.push(HostEvent::StaleReport { instance: id });
                return Ok(out);
            }
            return Err(HostError::UnknownInstance {
                site: self.site,
                instance: id,
            });
        };
        if !matches!(inst.state, TxnState::Tentative | TxnState::AwaitingGlobal)
            || !is_newer(&report.fresh_values, &inst.snapshot)
        {
            out.events.push(HostEvent::StaleReport { instance: id });
            return Ok(out);
        }
        inst.transition(TxnState::Restarting)?;
        inst.restart_count += 1;
        let count = inst.restart_count;
        out.events.push(HostEvent::Restarted {
            instance: id,
            restart_count: count,
            refetch: false,
        });
        if self.config.restart_cap.is_some_and(|cap| count > cap) {
            out.events.push(HostEvent::Starved { instance: id });
            self.finish(id, Outcome::Starved, _now);
            return Ok(out);
        }
        inst.snapshot = report.fresh_values;
        inst.arrival_time = report.new_arrival_time;
        inst.transition(TxnState::Tentative)?;
        self.write_sets.remove(&id);
        out.compute.push(ComputeJob {
            instance: id,
            epoch: count,
            delay_ms: self.config.compute_delay_ms,
        });
        Ok(out)
    }

    pub fn on_commit_ack(&mut self, ack: CommitAck, now: Timestamp) -> Result<HostOutput, HostError> {
        let mut out = HostOutput::default();
        let id = ack.instance_id;
        if let Some(f) = self.finished.get(&id) {
            out.events.push(HostEvent::Anomaly {
                instance: id,
                detail: format!("CommitAck after {:?}", f.outcome),
            });
            return Ok(out);
        }
        let inst = self.active_mut(id)?;
        if inst.state != TxnState::AwaitingGlobal {
            out.events.push(HostEvent::Anomaly {
                instance: id,
                detail: format!("CommitAck while {:?}", inst.state),
            });
            inst.state = TxnState::GloballyCommitted;
        } else {
            inst.transition(TxnState::GloballyCommitted)?;
        }
        let latency_ms = now.ms().saturating_sub(inst.began_at.ms());
        out.events.push(HostEvent::Committed {
            instance: id,
            commit_seq: ack.commit_seq,
            latency_ms,
        });
        self.finish(id, Outcome::Committed, now);
        Ok(out)
    }

    pub fn on_abort_notice(&mut self, id: InstanceId, now: Timestamp) -> Result<HostOutput, HostError> {
        let inst = self.active_mut(id)?;
        inst.transition(TxnState::Aborted)?;
        self.finish(id, Outcome::Aborted, now);
        Ok(HostOutput {
            events: vec![HostEvent::Aborted { instance: id }],
            ..Default::default()
        })
    }

    /// Broadcast baseline: the commit was stale, so fetch the data again.
    pub fn on_refetch_notice(&mut self, id: InstanceId, now: Timestamp) -> Result<HostOutput, HostError> {
        let inst = self.active_mut(id)?;
        if inst.state != TxnState::AwaitingGlobal {
            // Already re-fetching because of an invalidation.
            return Ok(HostOutput::default());
        }
        self.refetch(id, now)
    }

    /// Broadcast baseline: restart every tentative instance whose snapshot
    /// holds an invalidated version.
    pub fn on_invalidation(&mut self, inv: &Invalidation, now: Timestamp) -> Result<HostOutput, HostError> {
        let stale: Vec<InstanceId> = self
            .active
            .values()
            .filter(|i| i.state == TxnState::Tentative)
            .filter(|i| {
                i.snapshot
                    .iter()
                    .any(|(id, vv)| inv.items.get(id).is_some_and(|v| *v > vv.version))
            })
            .map(|i| i.instance_id)
            .collect();
        let mut out = HostOutput::default();
        for id in stale {
            out.merge(self.refetch(id, now)?);
        }
        Ok(out)
    }

    fn refetch(&mut self, id: InstanceId, now: Timestamp) -> Result<HostOutput, HostError> {
        let cap = self.config.restart_cap;
        let inst = self.active_mut(id)?;
        inst.transition(TxnState::Restarting)?;
        inst.restart_count += 1;
        let count = inst.restart_count;
        let req = DataRequest {
            instance_id: id,
            txn_type_id: inst.txn_type_id.clone(),
            row_key: inst.params.row_key,
        };
        let mut out = HostOutput::default();
        out.events.push(HostEvent::Restarted {
            instance: id,
            restart_count: count,
            refetch: true,
        });
        if cap.is_some_and(|c| count > c) {
            out.events.push(HostEvent::Starved { instance: id });
            self.finish(id, Outcome::Starved, now);
            return Ok(out);
        }
        self.write_sets.remove(&id);
        self.send(Message::DataRequest(req), &mut out);
        Ok(out)
    }

    /// Dispatches a delivered message to its handler.
    pub fn on_message(&mut self, msg: Message, now: Timestamp) -> Result<HostOutput, HostError> {
        match msg {
            Message::DataReply(r) => self.on_data_reply(r, now),
            Message::UpdateReport(r) => self.on_update_report(r, now),
            Message::CommitAck(a) => self.on_commit_ack(a, now),
            Message::AbortNotice { instance_id } => self.on_abort_notice(instance_id, now),
            Message::RefetchNotice { instance_id } => self.on_refetch_notice(instance_id, now),
            Message::Invalidation(inv) => self.on_invalidation(&inv, now),
            Message::ConflictNotice(n) => Ok(HostOutput {
                events: vec![HostEvent::ConflictNotice {
                    instance: n.instance_id,
                    earliest: n.earliest_arrival,
                }],
                ..Default::default()
            }),
            other => Err(HostError::UnexpectedMessage {
                site: self.site,
                kind: other.kind(),
            }),
        }
    }

    /// Toggles connectivity. Reconnecting flushes the outbox in FIFO order.
    pub fn set_connectivity(&mut self, connected: bool, _now: Timestamp) -> HostOutput {
        self.connected = connected;
        let mut out = HostOutput::default();
        if connected {
            while let Some(msg) = self.pending_outbox.pop_front() {
                self.send(msg, &mut out);
            }
        }
        out
    }

    /// Registers with a new cell and tells its base station about every
    /// active instance so that commit authority can stay where it began.
    pub fn move_cell(&mut self, new_cell: CellId, _now: Timestamp) -> HostOutput {
        let mut out = HostOutput::default();
        if new_cell == self.cell {
            return out;
        }
        self.cell = new_cell;
        let transfers: Vec<HandoffTransfer> = self
            .active
            .values()
            .map(|i| HandoffTransfer {
                instance_id: i.instance_id,
                coordinator_of_record: i.coordinator_of_record,
            })
            .collect();
        for t in transfers {
            self.send(Message::HandoffTransfer(t), &mut out);
        }
        out
    }
}

/// True when `fresh` carries a version newer than `snapshot` for some item,
/// or an item the snapshot lacks.
fn is_newer(fresh: &Fragment, snapshot: &Fragment) -> bool {
    fresh
        .iter()
        .any(|(id, vv)| snapshot.get(id).is_none_or(|s| vv.version > s.version))
}
