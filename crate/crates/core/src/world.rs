//! Glue between the event engine, the network, and protocol state machines.

use crate::audit::Audit;
use crate::message::Msg;
use crate::metrics::MetricSeries;
use crate::net::{ModeledMessage, NetEvent, Network, SendOutcome};
use crate::paxos::RequestId;
use crate::sim::{NodeId, Scheduler, VirtualTime};

/// Protocol-level timers. The target node is carried by the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timer {
    /// Periodic housekeeping (suspicion checks, retransmission decisions).
    Tick,
    /// Batch flush deadline; the argument identifies the batch generation.
    Flush(u64),
    /// Coordination-service session expiry for a crashed ring member.
    SessionTimeout(NodeId),
    /// End of ring reconfiguration for the given epoch.
    ReconfigDone(u64),
    /// A client may issue its next request.
    Issue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Net(NetEvent),
    Timer(Timer),
    Crash,
    Sample,
}

impl From<NetEvent> for Event {
    fn from(e: NetEvent) -> Self {
        Event::Net(e)
    }
}

/// Run-wide id counters.
#[derive(Debug, Default)]
pub struct Ids {
    next_value: u64,
    next_batch: u64,
}

impl Ids {
    pub fn value(&mut self) -> u64 {
        self.next_value += 1;
        self.next_value
    }

    pub fn batch(&mut self) -> u64 {
        self.next_batch += 1;
        self.next_batch
    }
}

/// Everything a handler may touch.
pub struct Ctx<'a> {
    pub sched: &'a mut Scheduler<Event>,
    pub net: &'a mut Network,
    pub metrics: &'a mut MetricSeries,
    pub audit: &'a mut Audit,
    pub ids: &'a mut Ids,
    /// Node whose deliveries feed the throughput series.
    pub reference_learner: NodeId,
    /// Start of the measured interval.
    pub measure_from: VirtualTime,
}

impl Ctx<'_> {
    pub fn now(&self) -> VirtualTime {
        self.sched.now()
    }

    /// Sends unless either endpoint is down; crashed destinations are
    /// silently skipped, as a reset connection would be.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Msg) -> Option<SendOutcome> {
        self.net.send(self.sched, from, to, msg).ok()
    }

    pub fn timer(&mut self, node: NodeId, delay: VirtualTime, t: Timer) {
        self.sched.schedule_in(delay, node, Event::Timer(t));
    }

    pub fn alive(&self, node: NodeId) -> bool {
        self.net.is_alive(node)
    }

    pub fn blocked(&self, node: NodeId) -> bool {
        self.net.is_blocked(node)
    }

    /// Records a decision observed at `node`.
    pub fn decided(&mut self, node: NodeId, instance: u64, value_id: u64) {
        let now = self.now();
        self.audit.on_decide(now, node, instance, value_id);
    }

    /// Records an in-order delivery at `node`. Deliveries at the reference
    /// learner feed the throughput and quorum series.
    pub fn delivered(&mut self, node: NodeId, value_id: u64, payload: u64, first_quorum: &[NodeId]) {
        let now = self.now();
        self.audit.on_deliver(now, node, value_id);
        if node == self.reference_learner {
            self.metrics.on_decision(now, payload, first_quorum);
        }
    }

    /// Answers clients, grouping request ids per client.
    pub fn reply(&mut self, from: NodeId, requests: impl IntoIterator<Item = RequestId>) {
        let mut by_client: Vec<(NodeId, Vec<RequestId>)> = Vec::new();
        for r in requests {
            match by_client.iter_mut().find(|(c, _)| *c == r.0) {
                Some((_, v)) => v.push(r),
                None => by_client.push((r.0, vec![r])),
            }
        }
        let now = self.now();
        for (client, ids) in by_client {
            for id in &ids {
                self.audit.on_reply(now, from, *id);
            }
            self.send(from, client, Msg::Reply(ids));
        }
    }
}

/// A protocol family wired over a set of server nodes.
pub trait Protocol {
    fn start(&mut self, ctx: &mut Ctx);
    fn on_message(&mut self, ctx: &mut Ctx, node: NodeId, msg: ModeledMessage);
    fn on_timer(&mut self, ctx: &mut Ctx, node: NodeId, timer: Timer);
    /// The node's blocked channels drained.
    fn on_unblocked(&mut self, _ctx: &mut Ctx, _node: NodeId) {}
    /// `node` crashed (called after the network has discarded its state).
    fn on_crash(&mut self, _ctx: &mut Ctx, _node: NodeId) {}
    /// Closed steering windows `(start, end, excluded acceptors)`.
    fn steering_windows(&self) -> Vec<SteeringWindow> {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringWindow {
    pub start: VirtualTime,
    pub end: VirtualTime,
    pub excluded: Vec<NodeId>,
    /// Bytes held above the kernel at each excluded acceptor, at start and end.
    pub held_at_start: Vec<u64>,
    pub held_at_end: Vec<u64>,
}
