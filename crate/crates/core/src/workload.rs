//! Closed-loop clients, the optional aggregate load cap, and the failure
//! schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use thiserror::Error;

use crate::arch::{ArchConfig, ArchError, Variant};
use crate::message::{Batch, Msg, Request};
use crate::paxos::RequestId;
use crate::sim::{NodeId, RngStream, VirtualTime};
use crate::world::{Ctx, Timer};

/// Admission accounting window.
pub const GATE_WINDOW: VirtualTime = VirtualTime::from_millis(100);
/// Spread of the clients' first submissions.
pub const START_JITTER: VirtualTime = VirtualTime::from_millis(10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttachPolicy {
    LeaderOnly,
    RandomReplica,
    Proxy,
}

impl AttachPolicy {
    pub fn name(self) -> &'static str {
        match self {
            AttachPolicy::LeaderOnly => "leader_only",
            AttachPolicy::RandomReplica => "random_replica",
            AttachPolicy::Proxy => "proxy",
        }
    }

    /// The policy each library uses.
    pub fn native(v: Variant) -> AttachPolicy {
        match v {
            Variant::Libpaxos => AttachPolicy::LeaderOnly,
            Variant::SPaxos => AttachPolicy::RandomReplica,
            Variant::OpenReplica | Variant::RingPaxos => AttachPolicy::Proxy,
        }
    }
}

impl fmt::Display for AttachPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttachPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "leader_only" => Ok(AttachPolicy::LeaderOnly),
            "random_replica" => Ok(AttachPolicy::RandomReplica),
            "proxy" => Ok(AttachPolicy::Proxy),
            _ => Err(format!("unknown attach policy `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientSpec {
    pub count: usize,
    pub attach_policy: AttachPolicy,
    pub request_size: u64,
    pub think_time: VirtualTime,
    pub outstanding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct FailureEvent {
    pub node: NodeId,
    pub at: VirtualTime,
}

/// Aggregate submission cap in Mb/s.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadCap {
    pub target_mbps: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("attach policy {policy} is not supported by {variant}")]
    BadPolicy {
        variant: Variant,
        policy: AttachPolicy,
    },
    #[error("node {0} appears more than once in the failure schedule")]
    DuplicateFailure(NodeId),
    #[error("failure of node {node} at {at} is not before the end of the run ({end})")]
    FailureAfterEnd {
        node: NodeId,
        at: VirtualTime,
        end: VirtualTime,
    },
    #[error("clients need at least one outstanding request")]
    ZeroOutstanding,
    #[error(transparent)]
    Arch(#[from] ArchError),
}

pub fn check_policy(v: Variant, p: AttachPolicy) -> Result<(), WorkloadError> {
    let ok = match v {
        Variant::Libpaxos => p == AttachPolicy::LeaderOnly,
        Variant::OpenReplica => p != AttachPolicy::RandomReplica,
        Variant::SPaxos => p == AttachPolicy::RandomReplica,
        Variant::RingPaxos => p == AttachPolicy::Proxy,
    };
    if ok {
        Ok(())
    } else {
        Err(WorkloadError::BadPolicy {
            variant: v,
            policy: p,
        })
    }
}

pub fn validate_failures(
    schedule: &[FailureEvent],
    duration: VirtualTime,
) -> Result<(), WorkloadError> {
    let mut seen = BTreeSet::new();
    for e in schedule {
        if !seen.insert(e.node) {
            return Err(WorkloadError::DuplicateFailure(e.node));
        }
        if e.at >= duration {
            return Err(WorkloadError::FailureAfterEnd {
                node: e.node,
                at: e.at,
                end: duration,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Allow,
    Defer,
}

/// Fixed-window byte budget shared by all clients.
#[derive(Clone, Debug)]
pub struct AdmissionGate {
    budget: Option<u64>,
    window: u64,
    in_window: u64,
    pub admitted_total: u64,
}

impl AdmissionGate {
    pub fn new(cap: LoadCap) -> Self {
        AdmissionGate {
            budget: cap
                .target_mbps
                .map(|m| (m * 1e6 / 8.0 * GATE_WINDOW.as_secs_f64()).round() as u64),
            window: 0,
            in_window: 0,
            admitted_total: 0,
        }
    }

    /// Admits `bytes` at `now` if the current window has room. An empty
    /// window always admits, so requests larger than the budget still flow.
    pub fn admit(&mut self, now: VirtualTime, bytes: u64) -> Admission {
        let w = now.as_nanos() / GATE_WINDOW.as_nanos();
        if w != self.window {
            self.window = w;
            self.in_window = 0;
        }
        if let Some(b) = self.budget {
            if self.in_window > 0 && self.in_window + bytes > b {
                return Admission::Defer;
            }
        }
        self.in_window += bytes;
        self.admitted_total += bytes;
        Admission::Allow
    }

    pub fn next_window(now: VirtualTime) -> VirtualTime {
        let w = now.as_nanos() / GATE_WINDOW.as_nanos();
        VirtualTime::from_nanos((w + 1) * GATE_WINDOW.as_nanos())
    }
}

struct Client {
    target: NodeId,
    next_seq: u64,
    unanswered: BTreeMap<u64, VirtualTime>,
    waiting: bool,
}

/// All client actors of a run. Client `k` is network node `first + k`.
pub struct Clients {
    spec: ClientSpec,
    first: NodeId,
    clients: Vec<Client>,
    gate: AdmissionGate,
    /// Latency samples are kept for replies inside this interval.
    measure: (VirtualTime, VirtualTime),
    pub replies: u64,
}

impl Clients {
    /// Attaches `spec.count` clients, numbered from node `first`.
    pub fn spawn(
        spec: ClientSpec,
        cfg: &ArchConfig,
        first: NodeId,
        cap: LoadCap,
        measure: (VirtualTime, VirtualTime),
        rng: &mut RngStream,
    ) -> Result<Clients, WorkloadError> {
        check_policy(cfg.variant, spec.attach_policy)?;
        if spec.outstanding == 0 {
            return Err(WorkloadError::ZeroOutstanding);
        }
        let entry = match spec.attach_policy {
            AttachPolicy::LeaderOnly => vec![cfg.leader()?],
            AttachPolicy::RandomReplica | AttachPolicy::Proxy => cfg.entry_points()?,
        };
        let clients = (0..spec.count)
            .map(|_| Client {
                target: entry[rng.index(entry.len())],
                next_seq: 0,
                unanswered: BTreeMap::new(),
                waiting: false,
            })
            .collect();
        Ok(Clients {
            spec,
            first,
            clients,
            gate: AdmissionGate::new(cap),
            measure,
            replies: 0,
        })
    }

    pub fn nodes(&self) -> std::ops::Range<NodeId> {
        self.first..self.first + self.clients.len()
    }

    pub fn owns(&self, node: NodeId) -> bool {
        self.nodes().contains(&node)
    }

    pub fn target(&self, node: NodeId) -> NodeId {
        self.clients[node - self.first].target
    }

    pub fn admitted_bytes(&self) -> u64 {
        self.gate.admitted_total
    }

    /// Schedules every client's first submission.
    pub fn start(&mut self, ctx: &mut Ctx, rng: &mut RngStream) {
        for k in 0..self.clients.len() {
            let at = VirtualTime::from_secs_f64(rng.uniform() * START_JITTER.as_secs_f64());
            self.clients[k].waiting = true;
            ctx.timer(self.first + k, at, Timer::Issue);
        }
    }

    /// Submits as many requests as the window allows.
    pub fn on_issue(&mut self, ctx: &mut Ctx, node: NodeId) {
        let k = node - self.first;
        self.clients[k].waiting = false;
        let now = ctx.now();
        while self.clients[k].unanswered.len() < self.spec.outstanding {
            let wire = self.spec.request_size;
            if self.gate.admit(now, wire) == Admission::Defer {
                self.clients[k].waiting = true;
                ctx.sched
                    .schedule(AdmissionGate::next_window(now), node, crate::world::Event::Timer(Timer::Issue))
                    .expect("future");
                return;
            }
            let c = &mut self.clients[k];
            let req = Request {
                client: node,
                seq: c.next_seq,
                size: self.spec.request_size,
                issued_at: now,
            };
            c.next_seq += 1;
            c.unanswered.insert(req.seq, now);
            let target = c.target;
            let batch = Rc::new(Batch {
                id: ctx.ids.batch(),
                origin: node,
                requests: vec![req],
            });
            ctx.send(node, target, Msg::Request(batch));
        }
    }

    pub fn on_reply(&mut self, ctx: &mut Ctx, node: NodeId, ids: &[RequestId]) {
        let k = node - self.first;
        let now = ctx.now();
        for id in ids {
            match self.clients[k].unanswered.remove(&id.1) {
                Some(sent) if id.0 == node => {
                    self.replies += 1;
                    if now >= self.measure.0 && now < self.measure.1 {
                        ctx.metrics.on_latency(now, node, now - sent);
                    }
                }
                _ => ctx
                    .audit
                    .violation(now, format!("client {node} got a reply for unknown request {id:?}")),
            }
        }
        let c = &mut self.clients[k];
        if !c.waiting && c.unanswered.len() < self.spec.outstanding {
            c.waiting = true;
            ctx.timer(node, self.spec.think_time, Timer::Issue);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn policy_compatibility() {
        assert!(check_policy(Variant::Libpaxos, AttachPolicy::LeaderOnly).is_ok());
        assert!(check_policy(Variant::SPaxos, AttachPolicy::RandomReplica).is_ok());
        assert_eq!(
            check_policy(Variant::Libpaxos, AttachPolicy::RandomReplica),
            Err(WorkloadError::BadPolicy {
                variant: Variant::Libpaxos,
                policy: AttachPolicy::RandomReplica
            })
        );
        for v in Variant::ALL {
            assert!(check_policy(v, AttachPolicy::native(v)).is_ok());
        }
    }

    #[test]
    fn failure_schedule_validation() {
        let s = |n, t| FailureEvent {
            node: n,
            at: VirtualTime::from_secs(t),
        };
        let end = VirtualTime::from_secs(150);
        assert!(validate_failures(&[], end).is_ok());
        assert!(validate_failures(&[s(2, 50)], end).is_ok());
        assert_eq!(
            validate_failures(&[s(2, 50), s(2, 80)], end),
            Err(WorkloadError::DuplicateFailure(2))
        );
        assert!(matches!(
            validate_failures(&[s(3, 200)], end),
            Err(WorkloadError::FailureAfterEnd { .. })
        ));
    }

    #[test]
    fn uncapped_gate_always_allows() {
        let mut g = AdmissionGate::new(LoadCap::default());
        for i in 0..1000 {
            assert_eq!(g.admit(VirtualTime::from_micros(i), 1 << 20), Admission::Allow);
        }
    }

    #[test]
    fn full_window_defers() {
        let cap = LoadCap {
            target_mbps: Some(54.0),
        };
        let mut g = AdmissionGate::new(cap);
        // 54 Mb/s over 100 ms is 675 000 bytes.
        let t = VirtualTime::from_millis(5);
        assert_eq!(g.admit(t, 675_000), Admission::Allow);
        assert_eq!(g.admit(t, 1), Admission::Defer);
        assert_eq!(g.admit(AdmissionGate::next_window(t), 1), Admission::Allow);
    }

    proptest! {
        #[test]
        fn admitted_bytes_respect_cap(
            cap in 1.0f64..100.0,
            size in 100u64..200_000,
            gaps in prop::collection::vec(0u64..5_000_000, 1..2000),
        ) {
            let mut g = AdmissionGate::new(LoadCap { target_mbps: Some(cap) });
            let mut t = VirtualTime::ZERO;
            for d in gaps {
                t += VirtualTime::from_nanos(d);
                g.admit(t, size);
            }
            let windows = t.as_nanos() / GATE_WINDOW.as_nanos() + 1;
            let budget = cap * 1e6 / 8.0 * GATE_WINDOW.as_secs_f64();
            // Each window admits at most its budget, or a single request.
            let bound = windows as f64 * budget.max(size as f64) + size as f64;
            prop_assert!((g.admitted_total as f64) <= bound);
        }
    }
}
