use serde::{Deserialize, Serialize};

use crate::model::Timestamp;

use super::NetError;

/// Latency and throughput of one direction of a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub latency_ms: u64,
    pub bytes_per_ms: u64,
}

impl Channel {
    pub fn new(latency_ms: u64, bytes_per_ms: u64) -> Result<Self, NetError> {
        if bytes_per_ms == 0 {
            return Err(NetError::ZeroRate);
        }
        Ok(Channel {
            latency_ms,
            bytes_per_ms,
        })
    }

    /// Latency plus serialization time, rounded up to whole milliseconds.
    pub fn transit_ms(&self, size_bytes: u64) -> u64 {
        self.latency_ms + size_bytes.div_ceil(self.bytes_per_ms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Towards the fixed network.
    Up,
    /// Towards the mobile host.
    Down,
}

/// Half-open interval `[start, end)` during which nothing is delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outage {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Outage {
    pub fn new(start: u64, end: u64) -> Self {
        Outage {
            start: Timestamp(start),
            end: Timestamp(end),
        }
    }

    pub fn covers(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

/// A point-to-point link with asymmetric directions and outage windows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub up: Channel,
    pub down: Channel,
    pub outages: Vec<Outage>,
}

impl Link {
    pub fn new(up: Channel, down: Channel) -> Self {
        Link {
            up,
            down,
            outages: Vec::new(),
        }
    }

    pub fn symmetric(channel: Channel) -> Self {
        Link::new(channel, channel)
    }

    pub fn with_outages(mut self, mut outages: Vec<Outage>) -> Self {
        outages.sort();
        self.outages = outages;
        self
    }

    pub fn channel(&self, dir: Direction) -> &Channel {
        match dir {
            Direction::Up => &self.up,
            Direction::Down => &self.down,
        }
    }

    /// When a message of `size_bytes` sent at `now` arrives: send time plus
    /// transit, deferred to the end of any outage covering that instant.
    pub fn delivery_time(&self, dir: Direction, size_bytes: u64, now: Timestamp) -> Timestamp {
        defer_past(&self.outages, now.after(self.channel(dir).transit_ms(size_bytes)))
    }
}

/// Pushes `t` past every window in `outages` (sorted by start) that covers it.
pub fn defer_past(outages: &[Outage], mut t: Timestamp) -> Timestamp {
    for o in outages {
        if o.covers(t) {
            t = o.end;
        }
    }
    t
}
