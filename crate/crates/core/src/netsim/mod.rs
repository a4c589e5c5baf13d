//! Deterministic discrete-event engine and network model.
//!
//! The [`EventQueue`] orders events by `(fire_at, seq)`. The [`Network`]
//! turns a send into a scheduled delivery over one of two link classes: the
//! wireless link between a host and a base station (asymmetric, subject to
//! per-host outage windows) and the wired backbone between base stations.
//! Links are FIFO per direction.

mod link;
mod queue;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use link::{defer_past, Channel, Direction, Link, Outage};
pub use queue::{EventQueue, Scheduled};

use crate::message::{Actor, Envelope};
use crate::model::{BaseStationId, CellId, InstanceId, Params, SiteId, Timestamp, TxnTypeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("cannot schedule at {fire_at}, clock is already at {now}")]
    SchedulingIntoPast { now: Timestamp, fire_at: Timestamp },
    #[error("no link from {from} to {to}")]
    NoSuchLink { from: Actor, to: Actor },
    #[error("link rate must be positive")]
    ZeroRate,
}

/// A transaction the workload asks a host to start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub site: SiteId,
    pub txn_type_id: TxnTypeId,
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    MessageDelivery(Envelope),
    ComputeDone {
        site: SiteId,
        instance: InstanceId,
        epoch: u32,
    },
    ConnectivityChange { site: SiteId, connected: bool },
    CellMove { site: SiteId, cell: CellId },
    BroadcastTick { base_station: BaseStationId },
    WorkloadArrival(Arrival),
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::MessageDelivery(_) => "deliver",
            EventKind::ComputeDone { .. } => "compute_done",
            EventKind::ConnectivityChange { .. } => "connectivity",
            EventKind::CellMove { .. } => "cell_move",
            EventKind::BroadcastTick { .. } => "broadcast_tick",
            EventKind::WorkloadArrival(_) => "arrival",
        }
    }
}

pub type SimEvent = Scheduled<EventKind>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkClass {
    Wireless,
    Backbone,
}

/// Message and byte totals per traffic class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    pub uplink_messages: u64,
    pub uplink_bytes: u64,
    pub downlink_messages: u64,
    pub downlink_bytes: u64,
    pub backbone_messages: u64,
    pub backbone_bytes: u64,
}

impl TrafficCounters {
    pub fn total_bytes(&self) -> u64 {
        self.uplink_bytes + self.downlink_bytes + self.backbone_bytes
    }

    pub fn total_messages(&self) -> u64 {
        self.uplink_messages + self.downlink_messages + self.backbone_messages
    }
}

/// Where a send goes, resolved from its endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hop {
    pub class: LinkClass,
    pub direction: Direction,
    pub host: Option<SiteId>,
}

#[derive(Clone, Debug)]
pub struct Network {
    wireless: Link,
    backbone: Link,
    host_outages: BTreeMap<SiteId, Vec<Outage>>,
    last_delivery: BTreeMap<(Actor, Actor), Timestamp>,
    counters: TrafficCounters,
}

impl Network {
    pub fn new(wireless: Link, backbone: Link) -> Self {
        Network {
            wireless,
            backbone,
            host_outages: BTreeMap::new(),
            last_delivery: BTreeMap::new(),
            counters: TrafficCounters::default(),
        }
    }

    pub fn wireless(&self) -> &Link {
        &self.wireless
    }

    pub fn backbone(&self) -> &Link {
        &self.backbone
    }

    pub fn set_outages(&mut self, site: SiteId, mut outages: Vec<Outage>) {
        outages.sort();
        self.host_outages.insert(site, outages);
    }

    pub fn outages(&self, site: SiteId) -> &[Outage] {
        self.host_outages.get(&site).map_or(&[], Vec::as_slice)
    }

    pub fn counters(&self) -> &TrafficCounters {
        &self.counters
    }

    pub fn hop(from: Actor, to: Actor) -> Result<Hop, NetError> {
        match (from, to) {
            (Actor::Host(h), Actor::BaseStation(_)) => Ok(Hop {
                class: LinkClass::Wireless,
                direction: Direction::Up,
                host: Some(h),
            }),
            (Actor::BaseStation(_), Actor::Host(h)) => Ok(Hop {
                class: LinkClass::Wireless,
                direction: Direction::Down,
                host: Some(h),
            }),
            (Actor::BaseStation(a), Actor::BaseStation(b)) if a != b => Ok(Hop {
                class: LinkClass::Backbone,
                direction: if a < b { Direction::Up } else { Direction::Down },
                host: None,
            }),
            _ => Err(NetError::NoSuchLink { from, to }),
        }
    }

    /// Delivery time of `env` if it were sent at `now`, ignoring FIFO order.
    pub fn delivery_time(&self, env: &Envelope, now: Timestamp) -> Result<Timestamp, NetError> {
        let hop = Self::hop(env.from, env.to)?;
        let link = match hop.class {
            LinkClass::Wireless => &self.wireless,
            LinkClass::Backbone => &self.backbone,
        };
        let t = link.delivery_time(hop.direction, env.size_bytes(), now);
        Ok(match hop.host {
            Some(h) => defer_past(self.outages(h), t),
            None => t,
        })
    }

    /// Schedules the delivery of `env` and accounts its bytes.
    ///
    /// A message never overtakes an earlier one between the same endpoints.
    pub fn send(
        &mut self,
        queue: &mut EventQueue<EventKind>,
        env: Envelope,
        now: Timestamp,
    ) -> Result<Timestamp, NetError> {
        let hop = Self::hop(env.from, env.to)?;
        let mut at = self.delivery_time(&env, now)?;
        let key = (env.from, env.to);
        if let Some(prev) = self.last_delivery.get(&key) {
            at = at.max(*prev);
        }
        self.last_delivery.insert(key, at);
        let size = env.size_bytes();
        let c = &mut self.counters;
        match (hop.class, hop.direction) {
            (LinkClass::Wireless, Direction::Up) => {
                c.uplink_messages += 1;
                c.uplink_bytes += size;
            }
            (LinkClass::Wireless, Direction::Down) => {
                c.downlink_messages += 1;
                c.downlink_bytes += size;
            }
            (LinkClass::Backbone, _) => {
                c.backbone_messages += 1;
                c.backbone_bytes += size;
            }
        }
        queue.schedule(at, EventKind::MessageDelivery(env))?;
        Ok(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{DataRequest, Message};

    fn net() -> Network {
        Network::new(
            Link::new(Channel::new(50, 1).unwrap(), Channel::new(50, 8).unwrap()),
            Link::symmetric(Channel::new(5, 100).unwrap()),
        )
    }

    fn request(site: u32) -> Envelope {
        Envelope::new(
            Actor::Host(SiteId(site)),
            Actor::BaseStation(BaseStationId(1)),
            Message::DataRequest(DataRequest {
                instance_id: InstanceId(1),
                txn_type_id: TxnTypeId::new("T1"),
                row_key: 103,
            }),
        )
    }

    #[test]
    fn send_schedules_and_counts() {
        let mut n = net();
        let mut q = EventQueue::new();
        let at = n.send(&mut q, request(1), Timestamp(0)).unwrap();
        assert_eq!(at, Timestamp(78));
        assert_eq!(n.counters().uplink_messages, 1);
        assert_eq!(n.counters().uplink_bytes, 28);
        let ev = q.pop().unwrap();
        assert_eq!(ev.fire_at, Timestamp(78));
        assert!(matches!(ev.event, EventKind::MessageDelivery(_)));
    }

    #[test]
    fn host_outage_defers_deliveries() {
        let mut n = net();
        n.set_outages(SiteId(1), vec![Outage::new(0, 1000)]);
        let mut q = EventQueue::new();
        assert_eq!(n.send(&mut q, request(1), Timestamp(10)).unwrap(), Timestamp(1000));
        assert_eq!(n.send(&mut q, request(2), Timestamp(10)).unwrap(), Timestamp(88));
    }

    #[test]
    fn no_link_between_hosts() {
        let mut n = net();
        let mut q = EventQueue::new();
        let env = Envelope::new(Actor::Host(SiteId(1)), Actor::Host(SiteId(2)), request(1).message);
        assert!(matches!(n.send(&mut q, env, Timestamp(0)), Err(NetError::NoSuchLink { .. })));
        let env = Envelope::new(
            Actor::BaseStation(BaseStationId(1)),
            Actor::BaseStation(BaseStationId(1)),
            request(1).message,
        );
        assert!(n.send(&mut q, env, Timestamp(0)).is_err());
        assert!(q.is_empty());
    }

    #[test]
    fn small_message_does_not_overtake() {
        let mut n = Network::new(
            Link::symmetric(Channel::new(0, 1).unwrap()),
            Link::symmetric(Channel::new(0, 1).unwrap()),
        );
        let mut q = EventQueue::new();
        let big = Envelope::new(
            Actor::BaseStation(BaseStationId(1)),
            Actor::Host(SiteId(1)),
            Message::HandoffForward(Box::new(request(1))),
        );
        let small = Envelope::new(
            Actor::BaseStation(BaseStationId(1)),
            Actor::Host(SiteId(1)),
            Message::AbortNotice { instance_id: InstanceId(1) },
        );
        let t1 = n.send(&mut q, big, Timestamp(0)).unwrap();
        let t2 = n.send(&mut q, small, Timestamp(0)).unwrap();
        assert_eq!(t1, Timestamp(44));
        assert_eq!(t2, t1);
    }
}
