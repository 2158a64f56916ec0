//! Run-wide safety checks fed from every decision and delivery point.

use std::collections::{BTreeMap, HashMap};

use crate::paxos::RequestId;
use crate::sim::{NodeId, VirtualTime};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub t: VirtualTime,
    pub what: String,
}

#[derive(Debug, Default)]
pub struct Audit {
    decided: HashMap<u64, (u64, NodeId)>,
    canon: Vec<u64>,
    positions: BTreeMap<NodeId, usize>,
    replied: HashMap<RequestId, NodeId>,
    violations: Vec<Violation>,
}

const MAX_RECORDED: usize = 32;

impl Audit {
    pub fn new() -> Self {
        Self::default()
    }

    fn flag(&mut self, t: VirtualTime, what: String) {
        if self.violations.len() < MAX_RECORDED {
            self.violations.push(Violation { t, what });
        }
    }

    /// A participant declared `instance` decided with value `value_id`.
    pub fn on_decide(&mut self, t: VirtualTime, by: NodeId, instance: u64, value_id: u64) {
        match self.decided.get(&instance) {
            None => {
                self.decided.insert(instance, (value_id, by));
            }
            Some(&(v, first)) if v != value_id => self.flag(
                t,
                format!(
                    "instance {instance}: node {by} decided value {value_id}, node {first} decided {v}"
                ),
            ),
            Some(_) => {}
        }
    }

    /// `learner` delivered `value_id` as the next entry of its sequence.
    pub fn on_deliver(&mut self, t: VirtualTime, learner: NodeId, value_id: u64) {
        let pos = self.positions.entry(learner).or_insert(0);
        let p = *pos;
        *pos += 1;
        if p < self.canon.len() {
            if self.canon[p] != value_id {
                let expected = self.canon[p];
                self.flag(
                    t,
                    format!(
                        "learner {learner} delivered value {value_id} at position {p}, others delivered {expected}"
                    ),
                );
            }
        } else {
            self.canon.push(value_id);
        }
    }

    /// A response for `req` was sent by `responder`.
    pub fn on_reply(&mut self, t: VirtualTime, responder: NodeId, req: RequestId) {
        if let Some(prev) = self.replied.insert(req, responder) {
            self.flag(
                t,
                format!(
                    "request {req:?} answered twice (by {prev} and {responder})"
                ),
            );
        }
    }

    pub fn violation(&mut self, t: VirtualTime, what: impl Into<String>) {
        self.flag(t, what.into());
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn decided_instances(&self) -> usize {
        self.decided.len()
    }

    /// Longest sequence delivered by any learner.
    pub fn delivered_len(&self) -> usize {
        self.canon.len()
    }

    pub fn decided_value(&self, instance: u64) -> Option<u64> {
        self.decided.get(&instance).map(|(v, _)| *v)
    }
}
