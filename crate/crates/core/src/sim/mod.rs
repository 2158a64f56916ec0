//! Deterministic discrete-event engine.
//!
//! Events are dispatched in lexicographic `(fire_at, seq)` order, where `seq`
//! is a global insertion counter. Two runs that schedule the same events in
//! the same order therefore dispatch them identically, independent of wall
//! clock or hash-map iteration order.

mod rng;
mod time;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use thiserror::Error;

pub use rng::{RngStream, RngStreams};
pub use time::VirtualTime;

/// Identifies a simulated process.
pub type NodeId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {fire_at} but the clock is already at {now}")]
    PastEvent { fire_at: VirtualTime, now: VirtualTime },
}

/// Opaque handle returned by [`Scheduler::schedule`], usable for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

/// A dispatched event.
#[derive(Debug, Clone)]
pub struct SimEvent<E> {
    pub fire_at: VirtualTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: E,
}

/// One line of the dispatch trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub fire_at: VirtualTime,
    pub seq: u64,
    pub target: NodeId,
}

struct Queued<E> {
    fire_at: VirtualTime,
    seq: u64,
    target: NodeId,
    payload: E,
}

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.seq) == (other.fire_at, other.seq)
    }
}
impl<E> Eq for Queued<E> {}
impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Queued<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Virtual clock plus priority queue of pending events.
pub struct Scheduler<E> {
    now: VirtualTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Queued<E>>>,
    cancelled: HashSet<u64>,
    live: usize,
    dispatched: u64,
    trace: Option<Vec<TraceEntry>>,
    digest: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: VirtualTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            live: 0,
            dispatched: 0,
            trace: None,
            digest: FNV_OFFSET,
        }
    }

    /// Keeps a full copy of the dispatch trace. Off by default; the running
    /// [`digest`](Self::trace_digest) is always maintained.
    pub fn record_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    /// FNV-1a fold over every dispatched `(fire_at, seq, target)`.
    pub fn trace_digest(&self) -> u64 {
        self.digest
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    /// Number of pending (not cancelled, not dispatched) events.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(
        &mut self,
        fire_at: VirtualTime,
        target: NodeId,
        payload: E,
    ) -> Result<EventHandle, SimError> {
        if fire_at < self.now {
            return Err(SimError::PastEvent {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Queued {
            fire_at,
            seq,
            target,
            payload,
        }));
        self.live += 1;
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current time. Never fails.
    pub fn schedule_in(&mut self, delay: VirtualTime, target: NodeId, payload: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, target, payload)
            .expect("now + delay is never in the past")
    }

    /// Returns true iff the event was pending and is now removed.
    pub fn cancel(&mut self, h: EventHandle) -> bool {
        if h.0 >= self.next_seq || self.cancelled.contains(&h.0) {
            return false;
        }
        // Dispatched events are not in the heap; detect them by scanning for
        // the seq only when it could still be pending.
        if !self.heap.iter().any(|Reverse(q)| q.seq == h.0) {
            return false;
        }
        self.cancelled.insert(h.0);
        self.live -= 1;
        true
    }

    /// Pops the next event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: VirtualTime) -> Option<SimEvent<E>> {
        loop {
            let head = self.heap.peek()?;
            if head.0.fire_at > t_end {
                return None;
            }
            let Reverse(q) = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&q.seq) {
                continue;
            }
            debug_assert!(q.fire_at >= self.now);
            self.now = q.fire_at;
            self.live -= 1;
            self.dispatched += 1;
            let entry = TraceEntry {
                fire_at: q.fire_at,
                seq: q.seq,
                target: q.target,
            };
            self.fold_digest(entry);
            if let Some(t) = self.trace.as_mut() {
                t.push(entry);
            }
            return Some(SimEvent {
                fire_at: q.fire_at,
                seq: q.seq,
                target: q.target,
                payload: q.payload,
            });
        }
    }

    /// Moves the clock forward to `t` (no-op if already past it).
    pub fn advance_to(&mut self, t: VirtualTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches every event with `fire_at <= t_end` through `handler`, then
    /// leaves the clock at `t_end`. Handlers may schedule further events.
    pub fn run_until<F>(&mut self, t_end: VirtualTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, SimEvent<E>),
    {
        let mut n = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
            n += 1;
        }
        self.advance_to(t_end);
        n
    }

    fn fold_digest(&mut self, e: TraceEntry) {
        for word in [e.fire_at.as_nanos(), e.seq, e.target as u64] {
            for b in word.to_le_bytes() {
                self.digest ^= b as u64;
                self.digest = self.digest.wrapping_mul(FNV_PRIME);
            }
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
