use std::collections::BTreeMap;

use crate::model::Timestamp;

use super::NetError;

/// An event with its firing time and scheduling sequence number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scheduled<E> {
    pub fire_at: Timestamp,
    pub seq: u64,
    pub event: E,
}

/// Priority queue of future events with a simulated clock.
///
/// Events fire in `(fire_at, seq)` order where `seq` is assigned at
/// scheduling time, so two runs that schedule the same events in the same
/// order replay identically.
#[derive(Clone, Debug)]
pub struct EventQueue<E> {
    now: Timestamp,
    next_seq: u64,
    events: BTreeMap<(Timestamp, u64), E>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            now: Timestamp::ZERO,
            next_seq: 0,
            events: BTreeMap::new(),
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn schedule(&mut self, fire_at: Timestamp, event: E) -> Result<u64, NetError> {
        if fire_at < self.now {
            return Err(NetError::SchedulingIntoPast {
                now: self.now,
                fire_at,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.insert((fire_at, seq), event);
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<Timestamp> {
        self.events.keys().next().map(|(t, _)| *t)
    }

    /// Removes the next event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Scheduled<E>> {
        let ((fire_at, seq), event) = self.events.pop_first()?;
        self.now = fire_at;
        Some(Scheduled { fire_at, seq, event })
    }

    /// Removes every event scheduled exactly at `fire_at` that matches
    /// `pred`, in sequence order.
    pub fn drain_at(&mut self, fire_at: Timestamp, mut pred: impl FnMut(&E) -> bool) -> Vec<Scheduled<E>> {
        let keys: Vec<(Timestamp, u64)> = self
            .events
            .range((fire_at, 0)..=(fire_at, u64::MAX))
            .filter(|(_, e)| pred(e))
            .map(|(k, _)| *k)
            .collect();
        keys.into_iter()
            .map(|k| {
                let event = self.events.remove(&k).expect("key just listed");
                Scheduled {
                    fire_at: k.0,
                    seq: k.1,
                    event,
                }
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.events.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_time_fires_in_scheduling_order() {
        let mut q = EventQueue::new();
        q.schedule(Timestamp(10), "b").unwrap();
        q.schedule(Timestamp(5), "a").unwrap();
        q.schedule(Timestamp(10), "c").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|s| s.event)).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert_eq!(q.now(), Timestamp(10));
    }

    #[test]
    fn event_at_now_fires_before_the_clock_moves() {
        let mut q = EventQueue::new();
        q.schedule(Timestamp(3), 1).unwrap();
        q.schedule(Timestamp(4), 2).unwrap();
        q.pop();
        q.schedule(Timestamp(3), 3).unwrap();
        let next = q.pop().unwrap();
        assert_eq!((next.fire_at, next.event), (Timestamp(3), 3));
    }

    #[test]
    fn past_is_rejected() {
        let mut q = EventQueue::new();
        q.schedule(Timestamp(9), ()).unwrap();
        q.pop();
        assert_eq!(
            q.schedule(Timestamp(8), ()),
            Err(NetError::SchedulingIntoPast {
                now: Timestamp(9),
                fire_at: Timestamp(8)
            })
        );
    }

    #[test]
    fn drain_at_takes_only_matching_events_at_that_time() {
        let mut q = EventQueue::new();
        for (t, v) in [(5, 1), (5, 2), (5, 3), (6, 4)] {
            q.schedule(Timestamp(t), v).unwrap();
        }
        let odd: Vec<_> = q.drain_at(Timestamp(5), |v| v % 2 == 1).into_iter().map(|s| s.event).collect();
        assert_eq!(odd, [1, 3]);
        assert_eq!(q.len(), 2);
        assert!(q.drain_at(Timestamp(7), |_| true).is_empty());
    }
}
