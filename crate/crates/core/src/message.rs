//! Protocol messages exchanged between mobile hosts and base stations, and
//! their deterministic wire sizes for bandwidth accounting.
//!
//! Sizes follow a fixed notional encoding: a 16-byte header on every kind,
//! 4-byte identifiers, 8-byte timestamps and sequence numbers, and 24 bytes
//! per transported item (8-byte item hash, 8-byte value, 8-byte version).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{
    BaseStationId, DataItemId, Fragment, InstanceId, RowKey, SiteId, Timestamp, TxnTypeId, Value,
    Version,
};

pub const HEADER_BYTES: u64 = 16;
pub const ID_BYTES: u64 = 4;
pub const TIME_BYTES: u64 = 8;
/// Item hash, value and version.
pub const ITEM_BYTES: u64 = 24;
/// Item hash plus one 8-byte scalar (a version or a value).
pub const ITEM_SCALAR_BYTES: u64 = 16;

/// Endpoint of a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Actor {
    Host(SiteId),
    BaseStation(BaseStationId),
}

impl Actor {
    pub fn as_host(self) -> Option<SiteId> {
        match self {
            Actor::Host(s) => Some(s),
            Actor::BaseStation(_) => None,
        }
    }

    pub fn as_base_station(self) -> Option<BaseStationId> {
        match self {
            Actor::BaseStation(b) => Some(b),
            Actor::Host(_) => None,
        }
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Host(s) => s.fmt(f),
            Actor::BaseStation(b) => b.fmt(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRequest {
    pub instance_id: InstanceId,
    pub txn_type_id: TxnTypeId,
    pub row_key: RowKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataReply {
    pub instance_id: InstanceId,
    pub fragment: Fragment,
    pub arrival_time: Timestamp,
}

/// Tells a requester the arrival time of the earliest in-flight transaction
/// that uses the same items. Informational only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictNotice {
    pub instance_id: InstanceId,
    pub earliest_arrival: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRequest {
    pub instance_id: InstanceId,
    pub read_versions: BTreeMap<DataItemId, Version>,
    pub write_set: BTreeMap<DataItemId, Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitAck {
    pub instance_id: InstanceId,
    pub commit_seq: u64,
}

/// Fresh values pushed to an in-flight transaction, with the directive to
/// re-execute against them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub instance_id: InstanceId,
    pub fresh_values: Fragment,
    pub new_arrival_time: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoffTransfer {
    pub instance_id: InstanceId,
    pub coordinator_of_record: BaseStationId,
}

/// Periodic invalidation report of the broadcast baseline: every item that
/// changed since the previous tick, with its new version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invalidation {
    pub items: BTreeMap<DataItemId, Version>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    DataRequest(DataRequest),
    DataReply(DataReply),
    ConflictNotice(ConflictNotice),
    CommitRequest(CommitRequest),
    CommitAck(CommitAck),
    UpdateReport(UpdateReport),
    HandoffTransfer(HandoffTransfer),
    /// A message relayed between base stations on behalf of a host that
    /// changed cells.
    HandoffForward(Box<Envelope>),
    Invalidation(Invalidation),
    /// Abort-on-conflict baseline: the commit was rejected for good.
    AbortNotice { instance_id: InstanceId },
    /// Broadcast baseline: the commit was stale; fetch the data again.
    RefetchNotice { instance_id: InstanceId },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::DataRequest(_) => "DataRequest",
            Message::DataReply(_) => "DataReply",
            Message::ConflictNotice(_) => "ConflictNotice",
            Message::CommitRequest(_) => "CommitRequest",
            Message::CommitAck(_) => "CommitAck",
            Message::UpdateReport(_) => "UpdateReport",
            Message::HandoffTransfer(_) => "HandoffTransfer",
            Message::HandoffForward(_) => "HandoffForward",
            Message::Invalidation(_) => "Invalidation",
            Message::AbortNotice { .. } => "AbortNotice",
            Message::RefetchNotice { .. } => "RefetchNotice",
        }
    }

    /// The instance a message concerns, looking through forwarding wrappers.
    pub fn instance_id(&self) -> Option<InstanceId> {
        match self {
            Message::DataRequest(m) => Some(m.instance_id),
            Message::DataReply(m) => Some(m.instance_id),
            Message::ConflictNotice(m) => Some(m.instance_id),
            Message::CommitRequest(m) => Some(m.instance_id),
            Message::CommitAck(m) => Some(m.instance_id),
            Message::UpdateReport(m) => Some(m.instance_id),
            Message::HandoffTransfer(m) => Some(m.instance_id),
            Message::HandoffForward(env) => env.message.instance_id(),
            Message::Invalidation(_) => None,
            Message::AbortNotice { instance_id } | Message::RefetchNotice { instance_id } => {
                Some(*instance_id)
            }
        }
    }

    pub fn size_bytes(&self) -> u64 {
        message_size_bytes(self)
    }
}

/// Notional encoded size of a message. A pure function of the payload.
pub fn message_size_bytes(msg: &Message) -> u64 {
    let body = match msg {
        Message::DataRequest(_) => 3 * ID_BYTES,
        Message::DataReply(m) => ITEM_BYTES * m.fragment.len() as u64,
        Message::UpdateReport(m) => ITEM_BYTES * m.fresh_values.len() as u64,
        Message::ConflictNotice(_) => ID_BYTES + TIME_BYTES,
        Message::CommitRequest(m) => {
            ID_BYTES
                + ITEM_SCALAR_BYTES * m.read_versions.len() as u64
                + ITEM_SCALAR_BYTES * m.write_set.len() as u64
        }
        Message::CommitAck(_) => ID_BYTES + TIME_BYTES,
        Message::HandoffTransfer(_) => 2 * ID_BYTES,
        Message::HandoffForward(inner) => inner.message.size_bytes(),
        Message::Invalidation(m) => ITEM_SCALAR_BYTES * m.items.len() as u64,
        Message::AbortNotice { .. } | Message::RefetchNotice { .. } => ID_BYTES,
    };
    HEADER_BYTES + body
}

/// A message with its sender and receiver.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: Actor,
    pub to: Actor,
    pub message: Message,
}

impl Envelope {
    pub fn new(from: Actor, to: Actor, message: Message) -> Self {
        Envelope { from, to, message }
    }

    pub fn size_bytes(&self) -> u64 {
        self.message.size_bytes()
    }
}
