//! Paxos state machines independent of any wiring: ballots, acceptor
//! promise/accept transitions, proposer value selection, Phase 2B collection
//! with first-quorum tracking, and in-order learner delivery.
//!
//! Every function here is a synchronous transition over plain data. The
//! architectures decide who sends what to whom; this module only decides what
//! each participant is allowed to do.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::sim::NodeId;

/// Number of instances reserved by one pre-executed Phase 1.
pub const PHASE1_WINDOW: u64 = 1 << 20;

/// Totally ordered proposal number. Ordering is `(round, proposer)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ballot {
    pub round: u64,
    pub proposer: NodeId,
}

impl Ballot {
    pub const fn new(round: u64, proposer: NodeId) -> Self {
        Ballot { round, proposer }
    }

    /// Smallest ballot of `proposer` strictly greater than `other`.
    pub fn above(other: Ballot, proposer: NodeId) -> Ballot {
        let b = Ballot::new(other.round, proposer);
        if b > other {
            b
        } else {
            Ballot::new(other.round + 1, proposer)
        }
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.round, self.proposer)
    }
}

/// A client request as `(client node, per-client sequence number)`.
pub type RequestId = (NodeId, u64);

/// The unit a consensus instance decides on: one or more client requests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Value {
    /// Unique per run; agreement audits compare ids.
    pub id: u64,
    /// Logical client payload carried by the value.
    pub payload_size: u64,
    /// Bytes this value occupies inside a protocol message when carried in full.
    pub wire_bytes: u64,
    pub requests: Vec<RequestId>,
    /// Dissemination batch ids (used when ordering is performed on ids).
    pub batches: Vec<u64>,
}

pub type ValueRef = Rc<Value>;

/// Per-instance acceptor bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AcceptorInstanceState {
    pub instance: u64,
    /// Highest ballot promised.
    pub c_rnd: Ballot,
    /// Ballot at which `v_val` was accepted.
    pub v_rnd: Option<Ballot>,
    pub v_val: Option<ValueRef>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Phase1Reply {
    Promise {
        ballot: Ballot,
        v_rnd: Option<Ballot>,
        v_val: Option<ValueRef>,
    },
    Reject {
        c_rnd: Ballot,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Phase2Reply {
    Accepted { ballot: Ballot },
    Reject { c_rnd: Ballot },
}

impl AcceptorInstanceState {
    pub fn new(instance: u64) -> Self {
        AcceptorInstanceState {
            instance,
            ..Default::default()
        }
    }

    pub fn on_phase1a(&mut self, b: Ballot) -> Phase1Reply {
        if b >= self.c_rnd {
            self.c_rnd = b;
            Phase1Reply::Promise {
                ballot: b,
                v_rnd: self.v_rnd,
                v_val: self.v_val.clone(),
            }
        } else {
            Phase1Reply::Reject { c_rnd: self.c_rnd }
        }
    }

    pub fn on_phase2a(&mut self, b: Ballot, v: ValueRef) -> Phase2Reply {
        if b >= self.c_rnd {
            self.c_rnd = b;
            self.v_rnd = Some(b);
            self.v_val = Some(v);
            Phase2Reply::Accepted { ballot: b }
        } else {
            Phase2Reply::Reject { c_rnd: self.c_rnd }
        }
    }

    fn check(&self) {
        debug_assert_eq!(self.v_rnd.is_some(), self.v_val.is_some());
        debug_assert!(self.v_rnd.is_none_or(|v| v <= self.c_rnd));
    }
}

/// All instances held by one acceptor, with a range promise so that a single
/// Phase 1A can cover a window of future instances.
#[derive(Debug, Default)]
pub struct AcceptorLog {
    range_promises: Vec<(u64, u64, Ballot)>,
    instances: BTreeMap<u64, AcceptorInstanceState>,
}

impl AcceptorLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn range_ballot(&self, instance: u64) -> Ballot {
        self.range_promises
            .iter()
            .filter(|(lo, hi, _)| (*lo..*hi).contains(&instance))
            .map(|(_, _, b)| *b)
            .max()
            .unwrap_or_default()
    }

    fn entry(&mut self, instance: u64) -> &mut AcceptorInstanceState {
        let floor = self.range_ballot(instance);
        let st = self
            .instances
            .entry(instance)
            .or_insert_with(|| AcceptorInstanceState::new(instance));
        if floor > st.c_rnd {
            st.c_rnd = floor;
        }
        st
    }

    pub fn get(&self, instance: u64) -> Option<&AcceptorInstanceState> {
        self.instances.get(&instance)
    }

    /// Phase 1A over `[from, to)`. Returns the accepted values in the range on
    /// promise, or the highest conflicting ballot on reject.
    pub fn on_phase1a_range(
        &mut self,
        b: Ballot,
        from: u64,
        to: u64,
    ) -> Result<Vec<(u64, Ballot, ValueRef)>, Ballot> {
        let floor = self
            .range_promises
            .iter()
            .filter(|(lo, hi, _)| *lo < to && from < *hi)
            .map(|(_, _, b)| *b)
            .max()
            .unwrap_or_default();
        let explicit = self
            .instances
            .range(from..to)
            .map(|(_, s)| s.c_rnd)
            .max()
            .unwrap_or_default();
        let highest = floor.max(explicit);
        if b < highest {
            return Err(highest);
        }
        self.range_promises.push((from, to, b));
        let mut accepted = Vec::new();
        for (i, st) in self.instances.range_mut(from..to) {
            st.c_rnd = b;
            if let (Some(r), Some(v)) = (st.v_rnd, st.v_val.clone()) {
                accepted.push((*i, r, v));
            }
            st.check();
        }
        Ok(accepted)
    }

    /// Forgets instances below `instance` (all known decided and delivered).
    pub fn trim_below(&mut self, instance: u64) {
        self.instances = self.instances.split_off(&instance);
        self.range_promises.retain(|(_, hi, _)| *hi > instance);
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn on_phase1a(&mut self, instance: u64, b: Ballot) -> Phase1Reply {
        let st = self.entry(instance);
        let r = st.on_phase1a(b);
        st.check();
        r
    }

    pub fn on_phase2a(&mut self, instance: u64, b: Ballot, v: ValueRef) -> Phase2Reply {
        let st = self.entry(instance);
        let r = st.on_phase2a(b, v);
        st.check();
        r
    }
}

/// One Phase 1B promise as seen by the proposer.
#[derive(Clone, Debug, PartialEq)]
pub struct Promise {
    pub acceptor: NodeId,
    pub ballot: Ballot,
    pub v_rnd: Option<Ballot>,
    pub v_val: Option<ValueRef>,
}

/// Value-selection rule: the value with the highest `v_rnd` among the
/// promises, or `fallback` when no promise carries a value.
pub fn choose_value(promises: &[Promise], fallback: ValueRef) -> ValueRef {
    debug_assert!(
        promises.windows(2).all(|w| w[0].ballot == w[1].ballot),
        "promises must share one ballot"
    );
    promises
        .iter()
        .filter_map(|p| Some((p.v_rnd?, p.v_val.clone()?)))
        .max_by_key(|(r, _)| *r)
        .map(|(_, v)| v)
        .unwrap_or(fallback)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PaxosError {
    #[error("phase 2A needs at least {needed} targets, got {got}")]
    InsufficientTargets { needed: usize, got: usize },
    #[error("ballot {new} does not exceed previously used ballot {previous}")]
    StaleBallot { new: Ballot, previous: Ballot },
    #[error("phase 1 incomplete at ballot {0}")]
    Phase1Incomplete(Ballot),
}

/// A Phase 1A covering a range of instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phase1A {
    pub ballot: Ballot,
    pub from: u64,
    pub to: u64,
}

/// A Phase 2A addressed to a concrete set of acceptors.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase2A {
    pub ballot: Ballot,
    pub instance: u64,
    pub value: ValueRef,
    pub targets: Vec<NodeId>,
}

/// Proposer-side ballot and Phase 1 bookkeeping for a single leader that
/// pre-executes Phase 1 over windows of instances.
#[derive(Debug)]
pub struct Proposer {
    pub id: NodeId,
    pub f: usize,
    last_ballot: Option<Ballot>,
    current: Ballot,
    promises: BTreeMap<NodeId, Vec<(u64, Ballot, ValueRef)>>,
    window: (u64, u64),
    ready: bool,
}

impl Proposer {
    pub fn new(id: NodeId, f: usize) -> Self {
        Proposer {
            id,
            f,
            last_ballot: None,
            current: Ballot::new(0, id),
            promises: BTreeMap::new(),
            window: (0, 0),
            ready: false,
        }
    }

    pub fn quorum(&self) -> usize {
        self.f + 1
    }

    pub fn ballot(&self) -> Ballot {
        self.current
    }

    pub fn phase1_done(&self) -> bool {
        self.ready
    }

    pub fn window(&self) -> (u64, u64) {
        self.window
    }

    /// Starts Phase 1 at `b` over `[from, to)`. `b` must exceed every ballot
    /// this proposer has used before.
    pub fn phase1a(&mut self, b: Ballot, from: u64, to: u64) -> Result<Phase1A, PaxosError> {
        if let Some(prev) = self.last_ballot {
            if b <= prev {
                return Err(PaxosError::StaleBallot {
                    new: b,
                    previous: prev,
                });
            }
        }
        self.last_ballot = Some(b);
        self.current = b;
        self.promises.clear();
        self.window = (from, to);
        self.ready = false;
        Ok(Phase1A {
            ballot: b,
            from,
            to,
        })
    }

    /// Extends the reserved window at the current ballot (pre-execution of the
    /// next range once the previous one is exhausted).
    pub fn extend_window(&mut self, to: u64) -> Phase1A {
        let from = self.window.1;
        self.window.1 = to;
        Phase1A {
            ballot: self.current,
            from,
            to,
        }
    }

    /// Records a promise; returns true when this promise completes Phase 1.
    pub fn on_phase1b(
        &mut self,
        acceptor: NodeId,
        b: Ballot,
        accepted: Vec<(u64, Ballot, ValueRef)>,
    ) -> bool {
        if b != self.current || self.ready {
            return false;
        }
        self.promises.entry(acceptor).or_default().extend(accepted);
        if self.promises.len() >= self.quorum() {
            self.ready = true;
            return true;
        }
        false
    }

    /// Promises relevant to `instance`, one per promising acceptor.
    pub fn promises_for(&self, instance: u64) -> Vec<Promise> {
        self.promises
            .iter()
            .map(|(a, acc)| {
                let best = acc
                    .iter()
                    .filter(|(i, _, _)| *i == instance)
                    .max_by_key(|(_, r, _)| *r);
                Promise {
                    acceptor: *a,
                    ballot: self.current,
                    v_rnd: best.map(|(_, r, _)| *r),
                    v_val: best.map(|(_, _, v)| v.clone()),
                }
            })
            .collect()
    }

    /// Instances for which some promise reported an accepted value.
    pub fn constrained_instances(&self) -> BTreeSet<u64> {
        self.promises
            .values()
            .flat_map(|acc| acc.iter().map(|(i, _, _)| *i))
            .collect()
    }

    pub fn phase2a(
        &self,
        instance: u64,
        value: ValueRef,
        targets: Vec<NodeId>,
    ) -> Result<Phase2A, PaxosError> {
        if !self.ready {
            return Err(PaxosError::Phase1Incomplete(self.current));
        }
        if targets.len() < self.quorum() {
            return Err(PaxosError::InsufficientTargets {
                needed: self.quorum(),
                got: targets.len(),
            });
        }
        Ok(Phase2A {
            ballot: self.current,
            instance,
            value,
            targets,
        })
    }
}

/// Outcome of feeding one Phase 2B to a collector.
#[derive(Clone, Debug, PartialEq)]
pub enum Collect {
    Pending,
    Decided {
        value: ValueRef,
        first_quorum: Vec<NodeId>,
    },
    /// The instance was already decided; the ack had no effect.
    Absorbed,
}

#[derive(Debug)]
struct InstanceAcks {
    by_ballot: BTreeMap<Ballot, Vec<NodeId>>,
    value: Option<ValueRef>,
}

/// Per-participant Phase 2B collection. Freezes each instance's first
/// majority-quorum: the first `f+1` acceptors whose acks at one ballot arrive.
#[derive(Debug)]
pub struct DecisionCollector {
    quorum: usize,
    pending: BTreeMap<u64, InstanceAcks>,
    decided: BTreeMap<u64, (ValueRef, Vec<NodeId>)>,
    floor: u64,
}

impl DecisionCollector {
    pub fn new(f: usize) -> Self {
        DecisionCollector {
            quorum: f + 1,
            pending: BTreeMap::new(),
            decided: BTreeMap::new(),
            floor: 0,
        }
    }

    pub fn quorum(&self) -> usize {
        self.quorum
    }

    pub fn is_decided(&self, instance: u64) -> bool {
        instance < self.floor || self.decided.contains_key(&instance)
    }

    pub fn decided(&self, instance: u64) -> Option<&(ValueRef, Vec<NodeId>)> {
        self.decided.get(&instance)
    }

    /// Records that `value` is the one being voted on for `instance` (when acks
    /// carry only a reference, the collector learns the value separately).
    pub fn set_value(&mut self, instance: u64, value: ValueRef) {
        if self.is_decided(instance) {
            return;
        }
        self.pending
            .entry(instance)
            .or_insert_with(|| InstanceAcks {
                by_ballot: BTreeMap::new(),
                value: None,
            })
            .value = Some(value);
    }

    pub fn on_phase2b(
        &mut self,
        instance: u64,
        from: NodeId,
        b: Ballot,
        value: Option<ValueRef>,
    ) -> Collect {
        if self.is_decided(instance) {
            return Collect::Absorbed;
        }
        let acks = self.pending.entry(instance).or_insert_with(|| InstanceAcks {
            by_ballot: BTreeMap::new(),
            value: None,
        });
        if let Some(v) = value {
            acks.value = Some(v);
        }
        let voters = acks.by_ballot.entry(b).or_default();
        if !voters.contains(&from) {
            voters.push(from);
        }
        if voters.len() >= self.quorum {
            if let Some(value) = acks.value.clone() {
                let first_quorum = voters[..self.quorum].to_vec();
                self.pending.remove(&instance);
                self.decided
                    .insert(instance, (value.clone(), first_quorum.clone()));
                return Collect::Decided {
                    value,
                    first_quorum,
                };
            }
        }
        Collect::Pending
    }

    /// Forgets everything below `instance`, which must all be decided. Later
    /// acks for those instances are absorbed.
    pub fn prune_below(&mut self, instance: u64) {
        if instance <= self.floor {
            return;
        }
        self.floor = instance;
        self.decided = self.decided.split_off(&instance);
        self.pending = self.pending.split_off(&instance);
    }
}

/// In-order delivery of decided instances.
#[derive(Debug, Default)]
pub struct Learner {
    next: u64,
    decided: BTreeMap<u64, ValueRef>,
}

impl Learner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_instance(&self) -> u64 {
        self.next
    }

    /// Records a decision. Duplicates of delivered or pending instances are
    /// ignored.
    pub fn on_decided(&mut self, instance: u64, value: ValueRef) {
        if instance >= self.next {
            self.decided.entry(instance).or_insert(value);
        }
    }

    pub fn is_known(&self, instance: u64) -> bool {
        instance < self.next || self.decided.contains_key(&instance)
    }

    /// Pops the maximal gap-free prefix of undelivered decisions.
    pub fn deliver(&mut self) -> Vec<(u64, ValueRef)> {
        let mut out = Vec::new();
        while let Some(v) = self.decided.remove(&self.next) {
            out.push((self.next, v));
            self.next += 1;
        }
        out
    }
}
