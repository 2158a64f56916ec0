//! S-Paxos: every replica is proposer, acceptor and learner. Request content
//! is disseminated by the receiving replica; the leader orders batch ids.
//!
//! A replica batches client requests (1 KB or 5 ms) and forwards the batch to
//! every other replica; each receiver acknowledges to everyone. A batch held by
//! `f+1` replicas is stable and the leader may order its id. Replicas execute
//! in decided order once the content is present, and only the receiving
//! replica answers the client. Replica links are blocking; a blocked replica
//! keeps serving peers but stops admitting client work.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::rc::Rc;

use super::{ArchConfig, ArchError};
use crate::message::{Batch, BatchRef, Msg, Request};
use crate::net::{Discipline, ModeledMessage, Network, StallPolicy};
use crate::paxos::{
    AcceptorLog, Ballot, Collect, DecisionCollector, Learner, Phase2Reply, Proposer, Value,
    ValueRef, PHASE1_WINDOW,
};
use crate::sim::{NodeId, VirtualTime};
use crate::world::{Ctx, Protocol, Timer};

/// Bytes per batch id inside ordering messages.
const ID_BYTES: u64 = 16;
const MAX_IDS_PER_INSTANCE: usize = 32;
/// How long executed content is kept to serve fetches.
const CONTENT_RETENTION: VirtualTime = VirtualTime::from_secs(5);

/// Dissemination state of one batch at one replica.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackedBatch {
    pub forwarder: Option<NodeId>,
    pub holders: BTreeSet<NodeId>,
    pub stable: bool,
    pub ordered_position: Option<u64>,
    pub executed: bool,
}

/// Stability bookkeeping: a batch is stable once `f+1` replicas hold it.
#[derive(Debug)]
pub struct StableTracker {
    quorum: usize,
    batches: HashMap<u64, TrackedBatch>,
}

impl StableTracker {
    pub fn new(f: usize) -> Self {
        StableTracker {
            quorum: f + 1,
            batches: HashMap::new(),
        }
    }

    pub fn get(&self, batch: u64) -> Option<&TrackedBatch> {
        self.batches.get(&batch)
    }

    /// Records that `holder` has the batch. Returns true if this made it stable.
    pub fn add_holder(&mut self, batch: u64, holder: NodeId) -> bool {
        let q = self.quorum;
        let t = self.batches.entry(batch).or_default();
        t.holders.insert(holder);
        if !t.stable && t.holders.len() >= q {
            t.stable = true;
            return true;
        }
        false
    }

    pub fn set_forwarder(&mut self, batch: u64, fwd: NodeId) {
        self.batches.entry(batch).or_default().forwarder = Some(fwd);
    }

    pub fn set_ordered(&mut self, batch: u64, pos: u64) {
        self.batches.entry(batch).or_default().ordered_position = Some(pos);
    }

    /// Stable and ordered.
    pub fn executable(&self, batch: u64) -> bool {
        self.batches
            .get(&batch)
            .is_some_and(|t| t.stable && t.ordered_position.is_some())
    }

    pub fn mark_executed(&mut self, batch: u64) {
        let t = self.batches.entry(batch).or_default();
        debug_assert!(t.stable && t.ordered_position.is_some());
        t.executed = true;
    }

    pub fn forget(&mut self, batch: u64) {
        self.batches.remove(&batch);
    }
}

struct Replica {
    tracker: StableTracker,
    content: HashMap<u64, BatchRef>,
    retired: VecDeque<(VirtualTime, u64)>,
    fetching: BTreeSet<u64>,
    incoming: Vec<Request>,
    incoming_bytes: u64,
    flush_gen: u64,
    flush_armed: bool,
    log: AcceptorLog,
    collector: DecisionCollector,
    learner: Learner,
    quorums: HashMap<u64, Vec<NodeId>>,
    exec: VecDeque<(u64, ValueRef)>,
}

pub struct SPaxos {
    f: usize,
    leader: NodeId,
    replicas: Vec<NodeId>,
    batch_bytes: u64,
    flush_after: VirtualTime,
    window: usize,
    state: BTreeMap<NodeId, Replica>,
    prop: Proposer,
    ready: VecDeque<u64>,
    ordered_ids: HashSet<u64>,
    next_instance: u64,
    in_flight: BTreeMap<u64, ValueRef>,
    batch_sizes: HashMap<u64, u64>,
}

pub fn wire_spaxos(cfg: &ArchConfig, net: &mut Network) -> Result<SPaxos, ArchError> {
    let replicas = cfg.acceptors();
    for &r in &replicas {
        net.set_node_discipline(r, Discipline::Blocking);
        net.set_stall_policy(r, StallPolicy::Origination);
    }
    let leader = cfg.leader()?;
    Ok(SPaxos {
        f: cfg.f,
        leader,
        state: replicas
            .iter()
            .map(|r| {
                (
                    *r,
                    Replica {
                        tracker: StableTracker::new(cfg.f),
                        content: HashMap::new(),
                        retired: VecDeque::new(),
                        fetching: BTreeSet::new(),
                        incoming: Vec::new(),
                        incoming_bytes: 0,
                        flush_gen: 0,
                        flush_armed: false,
                        log: AcceptorLog::new(),
                        collector: DecisionCollector::new(cfg.f),
                        learner: Learner::new(),
                        quorums: HashMap::new(),
                        exec: VecDeque::new(),
                    },
                )
            })
            .collect(),
        replicas,
        batch_bytes: cfg.params.spaxos_batch_bytes,
        flush_after: cfg.params.spaxos_flush,
        window: cfg.params.spaxos_window,
        prop: Proposer::new(leader, cfg.f),
        ready: VecDeque::new(),
        ordered_ids: HashSet::new(),
        next_instance: 0,
        in_flight: BTreeMap::new(),
        batch_sizes: HashMap::new(),
    })
}

impl SPaxos {
    fn others(&self, r: NodeId) -> Vec<NodeId> {
        self.replicas.iter().copied().filter(|x| *x != r).collect()
    }

    fn flush(&mut self, ctx: &mut Ctx, r: NodeId) {
        let st = self.state.get_mut(&r).expect("replica");
        st.flush_armed = false;
        st.flush_gen += 1;
        if st.incoming.is_empty() {
            return;
        }
        let batch = Rc::new(Batch {
            id: ctx.ids.batch(),
            origin: r,
            requests: std::mem::take(&mut st.incoming),
        });
        st.incoming_bytes = 0;
        st.content.insert(batch.id, batch.clone());
        st.tracker.set_forwarder(batch.id, r);
        let stable = st.tracker.add_holder(batch.id, r);
        self.batch_sizes.insert(batch.id, batch.bytes());
        for o in self.others(r) {
            ctx.send(r, o, Msg::Forward(batch.clone()));
        }
        if stable {
            self.on_stable(ctx, r, batch.id);
        }
    }

    fn on_stable(&mut self, ctx: &mut Ctx, r: NodeId, batch: u64) {
        if r == self.leader && self.ordered_ids.insert(batch) {
            self.ready.push_back(batch);
            self.propose(ctx);
        }
        self.try_execute(ctx, r);
    }

    fn propose(&mut self, ctx: &mut Ctx) {
        if !self.prop.phase1_done() || !ctx.alive(self.leader) {
            return;
        }
        while !self.ready.is_empty() && self.in_flight.len() < self.window {
            let n = self.ready.len().min(MAX_IDS_PER_INSTANCE);
            let ids: Vec<u64> = self.ready.drain(..n).collect();
            let payload = ids.iter().map(|b| self.batch_sizes.remove(b).unwrap_or(0)).sum();
            let v = Rc::new(Value {
                id: ctx.ids.value(),
                payload_size: payload,
                wire_bytes: ID_BYTES * ids.len() as u64,
                requests: vec![],
                batches: ids,
            });
            let i = self.next_instance;
            self.next_instance += 1;
            self.in_flight.insert(i, v.clone());
            self.issue(ctx, i, v);
        }
    }

    fn issue(&mut self, ctx: &mut Ctx, i: u64, v: ValueRef) {
        let b = self.prop.ballot();
        for o in self.others(self.leader) {
            ctx.send(
                self.leader,
                o,
                Msg::Phase2A {
                    ballot: b,
                    instance: i,
                    value: v.clone(),
                    steered: false,
                },
            );
        }
        self.accept(ctx, self.leader, b, i, v);
    }

    /// Acceptor step at replica `r`; the resulting 2B goes to every replica.
    fn accept(&mut self, ctx: &mut Ctx, r: NodeId, b: Ballot, i: u64, v: ValueRef) {
        let st = self.state.get_mut(&r).expect("replica");
        match st.log.on_phase2a(i, b, v.clone()) {
            Phase2Reply::Accepted { ballot } => {
                for o in self.others(r) {
                    ctx.send(
                        r,
                        o,
                        Msg::Phase2B {
                            ballot,
                            instance: i,
                            acceptor: r,
                            value: Some(v.clone()),
                        },
                    );
                }
                self.learn(ctx, r, i, r, ballot, v);
            }
            Phase2Reply::Reject { c_rnd } => {
                if r != self.leader {
                    ctx.send(r, self.leader, Msg::Reject { c_rnd });
                }
            }
        }
    }

    fn learn(&mut self, ctx: &mut Ctx, r: NodeId, i: u64, acc: NodeId, b: Ballot, v: ValueRef) {
        let st = self.state.get_mut(&r).expect("replica");
        if let Collect::Decided { value, first_quorum } = st.collector.on_phase2b(i, acc, b, Some(v)) {
            ctx.decided(r, i, value.id);
            st.quorums.insert(i, first_quorum);
            st.learner.on_decided(i, value);
            for (inst, val) in st.learner.deliver() {
                for (pos, bid) in val.batches.iter().enumerate() {
                    st.tracker.set_ordered(*bid, inst * MAX_IDS_PER_INSTANCE as u64 + pos as u64);
                }
                st.exec.push_back((inst, val));
            }
            let next = st.learner.next_instance();
            st.collector.prune_below(next.saturating_sub(1));
            if r == self.leader {
                self.in_flight.remove(&i);
                self.propose(ctx);
            }
            self.try_execute(ctx, r);
        }
    }

    fn try_execute(&mut self, ctx: &mut Ctx, r: NodeId) {
        let now = ctx.now();
        loop {
            let st = self.state.get_mut(&r).expect("replica");
            let Some((inst, val)) = st.exec.front().cloned() else { break };
            let missing: Vec<u64> = val
                .batches
                .iter()
                .copied()
                .filter(|b| !st.content.contains_key(b))
                .collect();
            if !missing.is_empty() {
                let mut fetch = vec![];
                for b in missing {
                    if st.fetching.insert(b) {
                        fetch.push(b);
                    }
                }
                for b in fetch {
                    let src = self.fetch_source(r, b);
                    if let Some(src) = src {
                        ctx.send(r, src, Msg::Fetch { batch: b });
                    }
                }
                break;
            }
            // Ordered content is stable by construction: the leader only
            // orders stable ids.
            let st = self.state.get_mut(&r).expect("replica");
            st.exec.pop_front();
            let mut replies = vec![];
            for b in &val.batches {
                let batch = st.content.get(b).expect("present").clone();
                let t = st.tracker.batches.entry(*b).or_default();
                t.stable = true;
                t.executed = true;
                if batch.origin == r {
                    replies.extend(batch.requests.iter().map(|q| q.id()));
                }
                st.retired.push_back((now, *b));
            }
            let fq = st.quorums.remove(&inst).unwrap_or_default();
            ctx.delivered(r, val.id, val.payload_size, &fq);
            if !replies.is_empty() {
                ctx.reply(r, replies);
            }
        }
        let st = self.state.get_mut(&r).expect("replica");
        while let Some(&(t, b)) = st.retired.front() {
            if now.saturating_sub(t) < CONTENT_RETENTION {
                break;
            }
            st.retired.pop_front();
            st.content.remove(&b);
            st.tracker.forget(b);
            st.fetching.remove(&b);
        }
    }

    fn fetch_source(&self, r: NodeId, b: u64) -> Option<NodeId> {
        let st = &self.state[&r];
        let t = st.tracker.get(b);
        let fwd = t.and_then(|t| t.forwarder).filter(|x| *x != r);
        fwd.or_else(|| {
            t.and_then(|t| t.holders.iter().copied().find(|h| *h != r))
        })
        .or_else(|| self.others(r).first().copied())
    }
}

impl Protocol for SPaxos {
    fn start(&mut self, ctx: &mut Ctx) {
        for a in &self.replicas {
            ctx.metrics.track_acceptor(*a);
        }
        let b = Ballot::new(1, self.leader);
        let m = self.prop.phase1a(b, 0, PHASE1_WINDOW).expect("fresh");
        for o in self.others(self.leader) {
            ctx.send(
                self.leader,
                o,
                Msg::Phase1A {
                    ballot: m.ballot,
                    from: m.from,
                    to: m.to,
                },
            );
        }
        let own = self
            .state
            .get_mut(&self.leader)
            .expect("leader replica")
            .log
            .on_phase1a_range(b, 0, PHASE1_WINDOW)
            .expect("fresh log");
        self.prop.on_phase1b(self.leader, b, own);
    }

    fn on_message(&mut self, ctx: &mut Ctx, node: NodeId, msg: ModeledMessage) {
        let from = msg.src;
        let Some(st) = self.state.get_mut(&node) else { return };
        match msg.body {
            Msg::Request(batch) => {
                for q in batch.requests.iter() {
                    st.incoming_bytes += q.size;
                    st.incoming.push(q.clone());
                }
                if st.incoming_bytes >= self.batch_bytes {
                    if !ctx.blocked(node) {
                        self.flush(ctx, node);
                    }
                } else if !st.flush_armed {
                    st.flush_armed = true;
                    let g = st.flush_gen;
                    ctx.timer(node, self.flush_after, Timer::Flush(g));
                }
            }
            Msg::Forward(batch) => {
                let id = batch.id;
                let fetched = st.fetching.remove(&id);
                st.content.insert(id, batch.clone());
                if fetched {
                    self.try_execute(ctx, node);
                    return;
                }
                st.tracker.set_forwarder(id, from);
                let s1 = st.tracker.add_holder(id, from);
                let s2 = st.tracker.add_holder(id, node);
                if node == self.leader {
                    self.batch_sizes.insert(id, batch.bytes());
                }
                for o in self.others(node) {
                    ctx.send(node, o, Msg::Ack { batch: id, from: node });
                }
                if s1 || s2 {
                    self.on_stable(ctx, node, id);
                } else {
                    self.try_execute(ctx, node);
                }
            }
            Msg::Ack { batch, from: acker } => {
                if st.tracker.add_holder(batch, acker) {
                    self.on_stable(ctx, node, batch);
                }
            }
            Msg::Fetch { batch } => {
                if let Some(b) = st.content.get(&batch).cloned() {
                    ctx.send(node, from, Msg::Forward(b));
                }
            }
            Msg::Phase1A { ballot, from: lo, to } => {
                let reply = match st.log.on_phase1a_range(ballot, lo, to) {
                    Ok(accepted) => Msg::Phase1B {
                        ballot,
                        acceptor: node,
                        accepted,
                    },
                    Err(c_rnd) => Msg::Reject { c_rnd },
                };
                ctx.send(node, from, reply);
            }
            Msg::Phase1B {
                ballot,
                acceptor,
                accepted,
            } if node == self.leader => {
                if self.prop.on_phase1b(acceptor, ballot, accepted) {
                    self.propose(ctx);
                }
            }
            Msg::Phase2A {
                ballot,
                instance,
                value,
                ..
            } => self.accept(ctx, node, ballot, instance, value),
            Msg::Phase2B {
                ballot,
                instance,
                acceptor,
                value: Some(v),
            } => self.learn(ctx, node, instance, acceptor, ballot, v),
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, node: NodeId, timer: Timer) {
        if let Timer::Flush(g) = timer {
            let Some(st) = self.state.get(&node) else { return };
            if st.flush_gen == g && ctx.alive(node) {
                if ctx.blocked(node) {
                    // Retried from on_unblocked.
                    return;
                }
                self.flush(ctx, node);
            }
        }
    }

    fn on_unblocked(&mut self, ctx: &mut Ctx, node: NodeId) {
        if self.state.get(&node).is_some_and(|s| !s.incoming.is_empty()) {
            self.flush(ctx, node);
        }
    }

    fn on_crash(&mut self, _ctx: &mut Ctx, node: NodeId) {
        if node == self.leader {
            return;
        }
        debug_assert!(self.f >= 1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executable_needs_stability_and_order() {
        let mut t = StableTracker::new(1);
        t.set_forwarder(7, 1);
        assert!(!t.add_holder(7, 1));
        t.set_ordered(7, 0);
        assert!(!t.executable(7), "ordered but not stable");
        assert!(t.add_holder(7, 2));
        assert!(t.executable(7));

        let mut t = StableTracker::new(1);
        t.add_holder(8, 1);
        t.add_holder(8, 3);
        assert!(!t.executable(8), "stable but not ordered");
        t.set_ordered(8, 4);
        assert!(t.executable(8));
        t.mark_executed(8);
        assert!(t.get(8).unwrap().executed);
    }

    #[test]
    fn duplicate_holders_do_not_count_twice() {
        let mut t = StableTracker::new(1);
        assert!(!t.add_holder(1, 5));
        assert!(!t.add_holder(1, 5));
        assert!(!t.get(1).unwrap().stable);
    }
}
