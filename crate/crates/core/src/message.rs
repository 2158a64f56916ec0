//! Protocol messages exchanged between simulated processes.

use std::rc::Rc;

use crate::paxos::{Ballot, RequestId, ValueRef};
use crate::sim::{NodeId, VirtualTime};

/// Framing overhead added to every message on the wire.
pub const HEADER_BYTES: u64 = 64;

/// A single client request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub client: NodeId,
    pub seq: u64,
    pub size: u64,
    pub issued_at: VirtualTime,
}

impl Request {
    pub fn id(&self) -> RequestId {
        (self.client, self.seq)
    }
}

/// One or more client requests travelling together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub id: u64,
    /// Node that assembled the batch.
    pub origin: NodeId,
    pub requests: Vec<Request>,
}

impl Batch {
    pub fn bytes(&self) -> u64 {
        self.requests.iter().map(|r| r.size).sum()
    }
}

pub type BatchRef = Rc<Batch>;

/// Ring Paxos Phase 2 token: the value travels with the accumulated votes.
#[derive(Clone, Debug, PartialEq)]
pub struct RingToken {
    pub epoch: u64,
    pub ballot: Ballot,
    pub instance: u64,
    pub value: ValueRef,
    pub votes: Vec<NodeId>,
    pub decided: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Msg {
    /// Client (or client proxy) submission.
    Request(BatchRef),
    /// Response to a client for the listed requests.
    Reply(Vec<RequestId>),
    Phase1A {
        ballot: Ballot,
        from: u64,
        to: u64,
    },
    Phase1B {
        ballot: Ballot,
        acceptor: NodeId,
        accepted: Vec<(u64, Ballot, ValueRef)>,
    },
    Reject {
        c_rnd: Ballot,
    },
    Phase2A {
        ballot: Ballot,
        instance: u64,
        value: ValueRef,
        steered: bool,
    },
    /// `value` is `Some` when the full value is carried, `None` for a
    /// reference-only acknowledgement.
    Phase2B {
        ballot: Ballot,
        instance: u64,
        acceptor: NodeId,
        value: Option<ValueRef>,
    },
    /// S-Paxos request dissemination (also used to answer a fetch).
    Forward(BatchRef),
    Ack {
        batch: u64,
        from: NodeId,
    },
    Fetch {
        batch: u64,
    },
    /// Ring Paxos: client batch travelling towards the coordinator.
    RingBatch(BatchRef),
    Ring2A(Box<RingToken>),
    /// Ring Paxos: decision notice returned to the coordinator.
    RingDecision {
        epoch: u64,
        instance: u64,
    },
    /// Opaque payload used by the pipeline micro-scenario.
    Data {
        seq: u64,
        bytes: u64,
    },
}

impl Msg {
    pub fn kind(&self) -> &'static str {
        match self {
            Msg::Request(_) => "request",
            Msg::Reply(_) => "reply",
            Msg::Phase1A { .. } => "phase1a",
            Msg::Phase1B { .. } => "phase1b",
            Msg::Reject { .. } => "reject",
            Msg::Phase2A { .. } => "phase2a",
            Msg::Phase2B { .. } => "phase2b",
            Msg::Forward(_) => "forward",
            Msg::Ack { .. } => "ack",
            Msg::Fetch { .. } => "fetch",
            Msg::RingBatch(_) => "ring_batch",
            Msg::Ring2A(_) => "ring_2a",
            Msg::RingDecision { .. } => "ring_decision",
            Msg::Data { .. } => "data",
        }
    }

    /// Bytes on the wire, header included.
    pub fn wire_size(&self) -> u64 {
        HEADER_BYTES
            + match self {
                Msg::Request(b) | Msg::Forward(b) | Msg::RingBatch(b) => b.bytes(),
                Msg::Reply(ids) => 16 * ids.len() as u64,
                Msg::Phase1B { accepted, .. } => {
                    accepted.iter().map(|(_, _, v)| v.wire_bytes + 24).sum()
                }
                Msg::Phase2A { value, .. } => value.wire_bytes,
                Msg::Phase2B { value, .. } => value.as_ref().map_or(0, |v| v.wire_bytes),
                Msg::Ring2A(t) => t.value.wire_bytes + 8 * t.votes.len() as u64,
                Msg::Data { bytes, .. } => *bytes,
                Msg::Phase1A { .. }
                | Msg::Reject { .. }
                | Msg::Ack { .. }
                | Msg::Fetch { .. }
                | Msg::RingDecision { .. } => 0,
            }
    }

    /// Messages that introduce new work into the system (as opposed to
    /// advancing work already in progress).
    pub fn is_origination(&self) -> bool {
        matches!(self, Msg::Request(_))
    }
}
