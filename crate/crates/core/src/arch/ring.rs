//! Ring Paxos: acceptors and the learner form a directed ring. The
//! coordinator (first acceptor) injects each value as a token that collects
//! votes hop by hop; the acceptor completing a majority marks it decided and
//! the token carries the decision on to the learner.
//!
//! Crashes are detected by a coordination-service session timeout, after
//! which the ring is rebuilt without the dead member and the coordinator
//! re-runs Phase 1 at a higher ballot.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::{ArchConfig, ArchError};
use crate::message::{Batch, Msg, Request, RingToken};
use crate::net::{Discipline, ModeledMessage, Network, StallPolicy};
use crate::paxos::{
    choose_value, AcceptorLog, Ballot, Learner, Phase2Reply, Proposer, Value, ValueRef,
    PHASE1_WINDOW,
};
use crate::sim::{NodeId, VirtualTime};
use crate::world::{Ctx, Protocol, Timer};

/// Learner-side batch threshold.
pub const RING_BATCH_BYTES: u64 = 12 * 1024;
const RING_FLUSH: VirtualTime = VirtualTime::from_millis(5);
const GC_TICK: VirtualTime = VirtualTime::from_secs(1);
const LOG_SLACK: u64 = 4096;

/// Current ring membership as published by the coordination service.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingState {
    pub order: Vec<NodeId>,
    pub epoch: u64,
    /// While set, the ring is being rebuilt and carries no traffic.
    pub reconfiguring_until: Option<VirtualTime>,
}

impl RingState {
    pub fn new(order: Vec<NodeId>) -> Self {
        RingState {
            order,
            epoch: 0,
            reconfiguring_until: None,
        }
    }

    pub fn successor(&self, n: NodeId) -> Option<NodeId> {
        let i = self.order.iter().position(|x| *x == n)?;
        Some(self.order[(i + 1) % self.order.len()])
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.order.contains(&n)
    }
}

/// Removes `dead` from the ring, bumps the epoch and starts the
/// reconfiguration pause `delay` long from `at`.
pub fn ring_reconfigure(
    rs: &RingState,
    dead: NodeId,
    at: VirtualTime,
    delay: VirtualTime,
) -> Result<RingState, ArchError> {
    if !rs.contains(dead) {
        return Err(ArchError::NodeNotInRing(dead));
    }
    Ok(RingState {
        order: rs.order.iter().copied().filter(|n| *n != dead).collect(),
        epoch: rs.epoch + 1,
        reconfiguring_until: Some(at + delay),
    })
}

pub struct Ring {
    f: usize,
    leader: NodeId,
    learner: NodeId,
    acceptors: Vec<NodeId>,
    rs: RingState,
    session_timeout: VirtualTime,
    reconfig_delay: VirtualTime,
    prop: Proposer,
    logs: BTreeMap<NodeId, AcceptorLog>,
    /// Coordinator: values not yet known decided, by instance.
    pending: BTreeMap<u64, ValueRef>,
    next_instance: u64,
    /// Batches that arrived while the ring could not carry traffic.
    parked: Vec<ValueRef>,
    learner_state: Learner,
    quorums: BTreeMap<u64, Vec<NodeId>>,
    incoming: Vec<Request>,
    incoming_bytes: u64,
    flush_gen: u64,
    flush_armed: bool,
    dead: Vec<NodeId>,
}

pub fn wire_ring(cfg: &ArchConfig, net: &mut Network) -> Result<Ring, ArchError> {
    let acceptors = cfg.acceptors();
    let learner = cfg.reference_learner()?;
    let leader = cfg.leader()?;
    let mut order = acceptors.clone();
    order.push(learner);
    for &n in &order {
        net.set_node_discipline(n, Discipline::Blocking);
        net.set_stall_policy(n, StallPolicy::Full);
    }
    Ok(Ring {
        f: cfg.f,
        leader,
        learner,
        logs: acceptors.iter().map(|a| (*a, AcceptorLog::new())).collect(),
        acceptors,
        rs: RingState::new(order),
        session_timeout: cfg.params.ring_session_timeout,
        reconfig_delay: cfg.params.ring_reconfig_delay,
        prop: Proposer::new(leader, cfg.f),
        pending: BTreeMap::new(),
        next_instance: 0,
        parked: Vec::new(),
        learner_state: Learner::new(),
        quorums: BTreeMap::new(),
        incoming: Vec::new(),
        incoming_bytes: 0,
        flush_gen: 0,
        flush_armed: false,
        dead: Vec::new(),
    })
}

impl Ring {
    fn can_propose(&self, ctx: &Ctx) -> bool {
        self.prop.phase1_done() && self.rs.reconfiguring_until.is_none() && ctx.alive(self.leader)
    }

    fn flush(&mut self, ctx: &mut Ctx) {
        self.flush_armed = false;
        self.flush_gen += 1;
        if self.incoming.is_empty() {
            return;
        }
        let batch = Rc::new(Batch {
            id: ctx.ids.batch(),
            origin: self.learner,
            requests: std::mem::take(&mut self.incoming),
        });
        self.incoming_bytes = 0;
        let to = self.rs.successor(self.learner).expect("learner in ring");
        ctx.send(self.learner, to, Msg::RingBatch(batch));
    }

    fn propose(&mut self, ctx: &mut Ctx, v: ValueRef) {
        if !self.can_propose(ctx) {
            self.parked.push(v);
            return;
        }
        let i = self.next_instance;
        self.next_instance += 1;
        self.pending.insert(i, v.clone());
        self.inject(ctx, i, v);
    }

    fn inject(&mut self, ctx: &mut Ctx, i: u64, v: ValueRef) {
        let token = RingToken {
            epoch: self.rs.epoch,
            ballot: self.prop.ballot(),
            instance: i,
            value: v,
            votes: vec![],
            decided: false,
        };
        self.at_acceptor(ctx, self.leader, token);
    }

    /// Vote at acceptor `a` and pass the token on.
    fn at_acceptor(&mut self, ctx: &mut Ctx, a: NodeId, mut token: RingToken) {
        if token.epoch != self.rs.epoch {
            return;
        }
        let log = self.logs.get_mut(&a).expect("acceptor log");
        match log.on_phase2a(token.instance, token.ballot, token.value.clone()) {
            Phase2Reply::Accepted { .. } => {
                if !token.votes.contains(&a) {
                    token.votes.push(a);
                }
                if !token.decided && token.votes.len() > self.f {
                    token.decided = true;
                    ctx.decided(a, token.instance, token.value.id);
                }
            }
            Phase2Reply::Reject { .. } => return,
        }
        if let Some(next) = self.rs.successor(a) {
            ctx.send(a, next, Msg::Ring2A(Box::new(token)));
        }
    }

    fn at_learner(&mut self, ctx: &mut Ctx, token: RingToken) {
        if !token.decided {
            return;
        }
        let i = token.instance;
        if self.learner_state.is_known(i) {
            return;
        }
        ctx.decided(self.learner, i, token.value.id);
        let fq: Vec<NodeId> = token.votes[..=self.f].to_vec();
        self.learner_state.on_decided(i, token.value);
        self.quorums.insert(i, fq);
        for (inst, v) in self.learner_state.deliver() {
            let q = self.quorums.remove(&inst).unwrap_or_default();
            ctx.delivered(self.learner, v.id, v.payload_size, &q);
            if !v.requests.is_empty() {
                ctx.reply(self.learner, v.requests.clone());
            }
        }
        if let Some(next) = self.rs.successor(self.learner) {
            ctx.send(
                self.learner,
                next,
                Msg::RingDecision {
                    epoch: self.rs.epoch,
                    instance: i,
                },
            );
        }
    }

    fn start_phase1(&mut self, ctx: &mut Ctx, b: Ballot) {
        let from = self.pending.keys().next().copied().unwrap_or(self.next_instance);
        let m = self
            .prop
            .phase1a(b, from, from + PHASE1_WINDOW)
            .expect("ballots only increase");
        for a in self.acceptors.clone() {
            if a == self.leader {
                let own = self
                    .logs
                    .get_mut(&a)
                    .expect("log")
                    .on_phase1a_range(b, m.from, m.to)
                    .unwrap_or_default();
                if self.prop.on_phase1b(a, b, own) {
                    self.on_phase1_complete(ctx);
                }
            } else {
                ctx.send(
                    self.leader,
                    a,
                    Msg::Phase1A {
                        ballot: b,
                        from: m.from,
                        to: m.to,
                    },
                );
            }
        }
    }

    fn on_phase1_complete(&mut self, ctx: &mut Ctx) {
        for i in self.prop.constrained_instances() {
            if i >= self.next_instance {
                self.next_instance = i + 1;
            }
            if !self.pending.contains_key(&i) && !self.learner_state.is_known(i) {
                let v = choose_value(&self.prop.promises_for(i), noop(ctx));
                self.pending.insert(i, v);
            }
        }
        let redo: Vec<(u64, ValueRef)> = self
            .pending
            .iter()
            .map(|(i, v)| (*i, choose_value(&self.prop.promises_for(*i), v.clone())))
            .collect();
        for (i, v) in redo {
            self.pending.insert(i, v.clone());
            self.inject(ctx, i, v);
        }
        for v in std::mem::take(&mut self.parked) {
            self.propose(ctx, v);
        }
    }

    fn gc(&mut self) {
        let floor = self
            .pending
            .keys()
            .next()
            .copied()
            .unwrap_or(self.next_instance)
            .min(self.learner_state.next_instance());
        for log in self.logs.values_mut() {
            log.trim_below(floor.saturating_sub(LOG_SLACK));
        }
    }
}

fn noop(ctx: &mut Ctx) -> ValueRef {
    Rc::new(Value {
        id: ctx.ids.value(),
        payload_size: 0,
        wire_bytes: 0,
        requests: vec![],
        batches: vec![],
    })
}

impl Protocol for Ring {
    fn start(&mut self, ctx: &mut Ctx) {
        for a in &self.acceptors {
            ctx.metrics.track_acceptor(*a);
        }
        self.start_phase1(ctx, Ballot::new(1, self.leader));
        ctx.timer(self.leader, GC_TICK, Timer::Tick);
    }

    fn on_message(&mut self, ctx: &mut Ctx, node: NodeId, msg: ModeledMessage) {
        let from = msg.src;
        match msg.body {
            Msg::Request(batch) if node == self.learner => {
                for q in batch.requests.iter() {
                    self.incoming_bytes += q.size;
                    self.incoming.push(q.clone());
                }
                if self.incoming_bytes >= RING_BATCH_BYTES {
                    self.flush(ctx);
                } else if !self.flush_armed {
                    self.flush_armed = true;
                    ctx.timer(node, RING_FLUSH, Timer::Flush(self.flush_gen));
                }
            }
            Msg::RingBatch(batch) if node == self.leader => {
                let bytes = batch.bytes();
                let v = Rc::new(Value {
                    id: ctx.ids.value(),
                    payload_size: bytes,
                    wire_bytes: bytes,
                    requests: batch.requests.iter().map(|r| r.id()).collect(),
                    batches: vec![batch.id],
                });
                self.propose(ctx, v);
            }
            Msg::Ring2A(token) => {
                if node == self.learner {
                    self.at_learner(ctx, *token);
                } else if self.logs.contains_key(&node) {
                    self.at_acceptor(ctx, node, *token);
                }
            }
            Msg::RingDecision { instance, .. } if node == self.leader => {
                self.pending.remove(&instance);
            }
            Msg::Phase1A { ballot, from: lo, to } => {
                if let Some(log) = self.logs.get_mut(&node) {
                    let reply = match log.on_phase1a_range(ballot, lo, to) {
                        Ok(accepted) => Msg::Phase1B {
                            ballot,
                            acceptor: node,
                            accepted,
                        },
                        Err(c_rnd) => Msg::Reject { c_rnd },
                    };
                    ctx.send(node, from, reply);
                }
            }
            Msg::Phase1B {
                ballot,
                acceptor,
                accepted,
            } if node == self.leader => {
                if self.prop.on_phase1b(acceptor, ballot, accepted) {
                    self.on_phase1_complete(ctx);
                }
            }
            Msg::Reject { c_rnd } if node == self.leader => {
                if c_rnd > self.prop.ballot() {
                    let b = Ballot::above(c_rnd, self.leader);
                    self.start_phase1(ctx, b);
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, node: NodeId, timer: Timer) {
        if !ctx.alive(node) {
            return;
        }
        match timer {
            Timer::Flush(g) if node == self.learner && g == self.flush_gen => {
                if !ctx.blocked(node) {
                    self.flush(ctx);
                }
            }
            Timer::SessionTimeout(dead) if node == self.leader => {
                if let Ok(rs) = ring_reconfigure(&self.rs, dead, ctx.now(), self.reconfig_delay) {
                    self.rs = rs;
                    self.acceptors.retain(|a| *a != dead);
                    ctx.timer(node, self.reconfig_delay, Timer::ReconfigDone(self.rs.epoch));
                }
            }
            Timer::ReconfigDone(epoch) if node == self.leader && epoch == self.rs.epoch => {
                self.rs.reconfiguring_until = None;
                let b = Ballot::above(self.prop.ballot(), self.leader);
                self.start_phase1(ctx, b);
            }
            Timer::Tick if node == self.leader => {
                self.gc();
                ctx.timer(node, GC_TICK, Timer::Tick);
            }
            _ => {}
        }
    }

    fn on_unblocked(&mut self, ctx: &mut Ctx, node: NodeId) {
        if node == self.learner && !self.flush_armed && !self.incoming.is_empty() {
            self.flush(ctx);
        }
    }

    fn on_crash(&mut self, ctx: &mut Ctx, node: NodeId) {
        if self.dead.contains(&node) || !self.rs.contains(node) {
            return;
        }
        self.dead.push(node);
        if node != self.leader {
            ctx.timer(self.leader, self.session_timeout, Timer::SessionTimeout(node));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconfigure_removes_member() {
        let rs = RingState::new(vec![1, 2, 3, 4]);
        let t = VirtualTime::from_secs(10);
        let d = VirtualTime::from_millis(500);
        let n = ring_reconfigure(&rs, 3, t, d).unwrap();
        assert_eq!(n.order, vec![1, 2, 4]);
        assert_eq!(n.epoch, 1);
        assert_eq!(n.reconfiguring_until, Some(VirtualTime::from_millis(10_500)));
        assert_eq!(n.successor(2), Some(4));
        assert_eq!(n.successor(4), Some(1));
        assert_eq!(ring_reconfigure(&n, 3, t, d), Err(ArchError::NodeNotInRing(3)));
    }
}
